//! Calibration results: a readable report plus machine tables.

use std::fmt::Write as _;
use std::path::Path;

use hovsim_core::calib::{CalibrationOutcome, CalibrationWarning};
use hovsim_core::net::Network;

use crate::export::ComparisonRow;
use crate::metrics::MetricsSummary;

pub fn render_report(
    outcome: &CalibrationOutcome,
    net: &Network,
    metrics: &MetricsSummary,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "calibration report");
    let _ = writeln!(s, "==================");
    let _ = writeln!(s, "converged: {}", if outcome.converged { "yes" } else { "no" });
    let _ = writeln!(s, "outer iterations: {}", outcome.outer_iterations);
    let _ = write!(s, "residual norms by run:");
    for (k, norm) in outcome.residual_norms.iter().enumerate() {
        if k == 0 {
            let _ = write!(s, " probe {norm:.6}");
        } else {
            let _ = write!(s, ", cycle {k} {norm:.6}");
        }
    }
    let _ = writeln!(s);

    for w in &outcome.warnings {
        match w {
            CalibrationWarning::TargetAboveSupply { offramp, interval, target, capacity } => {
                let _ = writeln!(
                    s,
                    "warning: '{}' interval {interval}: measured {target} veh/h meets or \
                     exceeds the exit capacity {capacity} veh/h",
                    net.links[offramp.0].name
                );
            }
        }
    }

    for cal in &outcome.offramps {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "offramp '{}' (leaves at node '{}')",
            net.links[cal.offramp.0].name, net.nodes[cal.node.0].name
        );
        let _ = writeln!(s, "interval  beta      target      realized    residual  flags");
        for (k, cell) in cal.intervals.iter().enumerate() {
            let mut flags = String::new();
            if cell.starved {
                flags.push_str(" starved");
            }
            if cell.excess {
                flags.push_str(" excess");
            }
            let _ = writeln!(
                s,
                "{k:<9} {:<9.6} {:<11.3} {:<11.3} {:<9.3}{flags}",
                cell.beta,
                cell.target,
                cell.realized,
                cell.realized - cell.target,
            );
        }
    }

    let total = metrics.total();
    let _ = writeln!(s);
    let _ = writeln!(s, "performance at the identified splits (threshold {} mph)", metrics.threshold);
    let _ = writeln!(s, "group    vmt           vht          delay");
    for (name, row) in [("gp", &metrics.gp), ("managed", &metrics.managed), ("total", &total)] {
        let _ = writeln!(s, "{name:<8} {:<13.3} {:<12.3} {:<12.3}", row.vmt, row.vht, row.delay);
    }

    let _ = writeln!(s);
    let _ = writeln!(s, "review notes");
    let _ = writeln!(s, "------------");
    let _ = writeln!(
        s,
        "Judge the fit before trusting the splits: check the density and speed\n\
         contours for bottleneck locations and queue extents you can vouch for,\n\
         compare the table above against field counts, and revisit demands or\n\
         diagrams by hand where they disagree. Starved or excess intervals mean\n\
         the measurement cannot be reproduced by any exit fraction; inspect the\n\
         measurements and the upstream supply there."
    );
    s
}

pub fn write_report(dir: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(dir.join("calibration.txt"), text)
}

/// The identified fractions, one row per (offramp, interval).
pub fn write_betas(dir: &Path, outcome: &CalibrationOutcome, net: &Network) -> std::io::Result<()> {
    let mut s = String::from("offramp,interval,beta,starved,excess\n");
    for cal in &outcome.offramps {
        let name = &net.links[cal.offramp.0].name;
        for (k, cell) in cal.intervals.iter().enumerate() {
            let _ = writeln!(s, "{name},{k},{},{},{}", cell.beta, cell.starved, cell.excess);
        }
    }
    std::fs::write(dir.join("betas.csv"), s)
}

pub fn comparison_rows(outcome: &CalibrationOutcome, interval_hours: f64) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for cal in &outcome.offramps {
        for (k, cell) in cal.intervals.iter().enumerate() {
            rows.push(ComparisonRow {
                time: k as f64 * interval_hours,
                offramp: cal.offramp.0,
                target: cell.target,
                simulated: cell.realized,
            });
        }
    }
    // Table order is by time, then offramp id.
    rows.sort_by(|a, b| (a.time, a.offramp).partial_cmp(&(b.time, b.offramp)).expect("finite"));
    rows
}
