//! Run exports: contour tables, link inventory, and run metadata.
//!
//! Everything is plain UTF-8 with LF line endings and fully determined by
//! the run: same output, same bytes. Contour tables are long-form
//! `time,link,group,value` rows ordered by time then link; per-lane
//! quantities divide by the link's lane count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hovsim_core::net::{LaneGroup, Network};
use hovsim_core::sim::SimOutput;
use serde::{Deserialize, Serialize};

pub fn group_label(g: LaneGroup) -> &'static str {
    match g {
        LaneGroup::Gp => "gp",
        LaneGroup::Managed => "managed",
        LaneGroup::Onramp => "onramp",
        LaneGroup::Offramp => "offramp",
        LaneGroup::Auxiliary => "auxiliary",
    }
}

fn writer(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Density (veh/mi/lane, steps+1 snapshots), flow (veh/h/lane), and speed
/// (mph) tables.
pub fn write_contours(dir: &Path, out: &SimOutput, net: &Network) -> std::io::Result<()> {
    let dt = out.dt_hours;
    let lanes: Vec<f64> = net.links.iter().map(|l| l.lanes as f64).collect();
    let groups: Vec<&str> = net.links.iter().map(|l| group_label(l.lane_group)).collect();

    let mut density = writer(dir, "density.csv")?;
    writeln!(density, "time,link,group,value")?;
    for t in 0..=out.steps {
        let time = t as f64 * dt;
        for link in 0..net.links.len() {
            let total = if t == out.steps {
                out.final_densities[link].iter().sum::<f64>()
            } else {
                out.density[link][t]
            };
            writeln!(density, "{time},{link},{},{}", groups[link], total / lanes[link])?;
        }
    }
    density.flush()?;

    for (name, table) in [("flow.csv", &out.flow), ("speed.csv", &out.speed)] {
        let mut w = writer(dir, name)?;
        writeln!(w, "time,link,group,value")?;
        for t in 0..out.steps {
            let time = t as f64 * dt;
            for link in 0..net.links.len() {
                let value = if name == "flow.csv" {
                    table[link][t] / lanes[link]
                } else {
                    table[link][t]
                };
                writeln!(w, "{time},{link},{},{value}", groups[link])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Link inventory: everything exports and recomputation need to interpret
/// the contour tables.
pub fn write_links(dir: &Path, net: &Network) -> std::io::Result<()> {
    let mut w = writer(dir, "links.csv")?;
    writeln!(w, "id,name,group,length,lanes")?;
    for (i, l) in net.links.iter().enumerate() {
        writeln!(w, "{i},{},{},{},{}", l.name, group_label(l.lane_group), l.length, l.lanes)?;
    }
    w.flush()
}

/// Run metadata persisted next to the tables, TOML for hand inspection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunRecord {
    pub dt_seconds: f64,
    pub steps: usize,
    /// Vehicle balance of the run, in vehicles.
    pub injected: f64,
    pub discharged: f64,
    pub stored_initial: f64,
    pub stored_final: f64,
    pub clamped_negative: f64,
    pub conservation_defect: f64,
}

impl RunRecord {
    pub fn of(out: &SimOutput) -> Self {
        RunRecord {
            dt_seconds: out.dt_hours * 3600.0,
            steps: out.steps,
            injected: out.injected,
            discharged: out.discharged,
            stored_initial: out.stored_initial,
            stored_final: out.stored_final,
            clamped_negative: out.clamped_negative,
            conservation_defect: out.conservation_defect(),
        }
    }
}

pub fn write_run_record(dir: &Path, record: &RunRecord) -> std::io::Result<()> {
    let text = toml::to_string_pretty(record).expect("run records serialize");
    std::fs::write(dir.join("run.toml"), text)
}

pub fn read_run_record(dir: &Path) -> Result<RunRecord, String> {
    let path = dir.join("run.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// One measured-vs-simulated row of the offramp comparison table.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonRow {
    /// Interval start, hours.
    pub time: f64,
    pub offramp: usize,
    pub target: f64,
    pub simulated: f64,
}

/// Always written; a run with no measurements gets the header alone.
pub fn write_offramp_comparison(dir: &Path, rows: &[ComparisonRow]) -> std::io::Result<()> {
    let mut w = writer(dir, "offramp_comparison.csv")?;
    writeln!(w, "time,offramp,target,simulated,residual")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.time,
            r.offramp,
            r.target,
            r.simulated,
            r.simulated - r.target
        )?;
    }
    w.flush()
}
