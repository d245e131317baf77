//! Corridor performance: vehicle-miles, vehicle-hours, and delay below a
//! speed threshold, split general-purpose versus managed.

use std::collections::HashMap;
use std::path::Path;

use hovsim_core::net::{LaneGroup, Network};
use hovsim_core::sim::SimOutput;

use crate::export::read_run_record;

pub const DEFAULT_DELAY_THRESHOLD: f64 = 45.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsRow {
    /// Vehicle-miles traveled.
    pub vmt: f64,
    /// Vehicle-hours traveled.
    pub vht: f64,
    /// Vehicle-hours spent below the threshold speed, weighted by the
    /// shortfall.
    pub delay: f64,
}

impl MetricsRow {
    fn add(&mut self, rho: f64, length: f64, dt: f64, speed: f64, threshold: f64) {
        let vht = rho * length * dt;
        self.vht += vht;
        self.vmt += speed * vht;
        if speed < threshold {
            self.delay += vht * (1.0 - speed / threshold);
        }
    }
}

/// GP here means every lane that is not managed: mainline general-purpose
/// lanes plus ramps and auxiliaries, so the two rows always add up to the
/// whole corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub threshold: f64,
    pub gp: MetricsRow,
    pub managed: MetricsRow,
}

impl MetricsSummary {
    pub fn total(&self) -> MetricsRow {
        MetricsRow {
            vmt: self.gp.vmt + self.managed.vmt,
            vht: self.gp.vht + self.managed.vht,
            delay: self.gp.delay + self.managed.delay,
        }
    }
}

pub fn compute_metrics(out: &SimOutput, net: &Network, threshold: f64) -> MetricsSummary {
    let mut summary = MetricsSummary {
        threshold,
        gp: MetricsRow::default(),
        managed: MetricsRow::default(),
    };
    let dt = out.dt_hours;
    for (i, link) in net.links.iter().enumerate() {
        let row = if link.lane_group == LaneGroup::Managed {
            &mut summary.managed
        } else {
            &mut summary.gp
        };
        for t in 0..out.steps {
            row.add(out.density[i][t], link.length, dt, out.speed[i][t], threshold);
        }
    }
    summary
}

pub fn render_metrics(summary: &MetricsSummary) -> String {
    let total = summary.total();
    let mut s = String::from("group,vmt,vht,delay\n");
    for (name, row) in [("gp", &summary.gp), ("managed", &summary.managed), ("total", &total)] {
        s.push_str(&format!("{name},{},{},{}\n", row.vmt, row.vht, row.delay));
    }
    s
}

pub fn write_metrics(dir: &Path, summary: &MetricsSummary) -> std::io::Result<()> {
    std::fs::write(dir.join("metrics.csv"), render_metrics(summary))
}

struct LinkRow {
    group: String,
    length: f64,
    lanes: f64,
}

fn parse_links_csv(dir: &Path) -> Result<Vec<LinkRow>, String> {
    let path = dir.join("links.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(format!("{}:{}: expected 5 columns", path.display(), n + 1));
        }
        let id: usize = parts[0]
            .parse()
            .map_err(|e| format!("{}:{}: bad id: {e}", path.display(), n + 1))?;
        if id != rows.len() {
            return Err(format!("{}:{}: ids must be dense", path.display(), n + 1));
        }
        rows.push(LinkRow {
            group: parts[2].to_string(),
            length: parts[3]
                .parse()
                .map_err(|e| format!("{}:{}: bad length: {e}", path.display(), n + 1))?,
            lanes: parts[4]
                .parse()
                .map_err(|e| format!("{}:{}: bad lanes: {e}", path.display(), n + 1))?,
        });
    }
    Ok(rows)
}

fn parse_contour(dir: &Path, name: &str) -> Result<Vec<(f64, usize, f64)>, String> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(format!("{}:{}: expected 4 columns", path.display(), n + 1));
        }
        let time: f64 = parts[0]
            .parse()
            .map_err(|e| format!("{}:{}: bad time: {e}", path.display(), n + 1))?;
        let link: usize = parts[1]
            .parse()
            .map_err(|e| format!("{}:{}: bad link: {e}", path.display(), n + 1))?;
        let value: f64 = parts[3]
            .parse()
            .map_err(|e| format!("{}:{}: bad value: {e}", path.display(), n + 1))?;
        rows.push((time, link, value));
    }
    Ok(rows)
}

/// Recompute the summary from an export directory: density and speed
/// contours joined per (time, link), scaled back to whole-link densities.
/// The trailing density snapshot has no speed row and drops out naturally.
pub fn metrics_from_dir(dir: &Path, threshold: f64) -> Result<MetricsSummary, String> {
    let links = parse_links_csv(dir)?;
    let record = read_run_record(dir)?;
    let dt = record.dt_seconds / 3600.0;
    let density = parse_contour(dir, "density.csv")?;
    let mut speed = parse_contour(dir, "speed.csv")?;

    let density_at: HashMap<(u64, usize), f64> = density
        .iter()
        .map(|&(time, link, value)| ((time.to_bits(), link), value))
        .collect();

    // Accumulate link-major like the in-memory computation, so the two
    // paths agree to the last bit when dt survives its round trip.
    speed.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).expect("finite times"));

    let mut summary = MetricsSummary {
        threshold,
        gp: MetricsRow::default(),
        managed: MetricsRow::default(),
    };
    for &(time, link, v) in &speed {
        let l = links
            .get(link)
            .ok_or_else(|| format!("speed.csv: link {link} missing from links.csv"))?;
        let per_lane = density_at
            .get(&(time.to_bits(), link))
            .ok_or_else(|| format!("density.csv: no row for time {time} link {link}"))?;
        let rho = per_lane * l.lanes;
        let row = if l.group == "managed" { &mut summary.managed } else { &mut summary.gp };
        row.add(rho, l.length, dt, v, threshold);
    }
    Ok(summary)
}
