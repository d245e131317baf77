use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hovsim_core::calib::{run_calibration_loop, CalibrationConfig};
use hovsim_core::sim::{SimConfig, Simulator};
use hovsim_cli::export::{
    write_contours, write_links, write_offramp_comparison, write_run_record, RunRecord,
};
use hovsim_cli::metrics::{
    compute_metrics, metrics_from_dir, render_metrics, write_metrics, DEFAULT_DELAY_THRESHOLD,
};
use hovsim_cli::report::{comparison_rows, render_report, write_betas, write_report};
use hovsim_cli::scenario::{load_scenario, load_targets, LoadError, LoadedScenario};

/// Corridor traffic simulator with managed lanes and exit-flow calibration.
#[derive(Parser)]
#[command(name = "hovsim", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export contour tables and metrics.
    Simulate {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify offramp exit fractions from measured exit flows.
    Calibrate {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Measured offramp flows (TOML).
        #[arg(long)]
        targets: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Most corridor reruns before giving up.
        #[arg(long, default_value_t = 8)]
        max_outer: usize,
        /// Relative flow-match tolerance.
        #[arg(long, default_value_t = 0.005)]
        tol: f64,
    },
    /// Check a scenario file and report problems without running it.
    Validate {
        /// Scenario file (TOML).
        scenario: PathBuf,
    },
    /// Recompute performance metrics from an export directory.
    Metrics {
        /// Directory written by `simulate` or `calibrate`.
        results: PathBuf,
        /// Delay threshold speed, mph.
        #[arg(long, default_value_t = DEFAULT_DELAY_THRESHOLD)]
        threshold: f64,
    },
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        CliError { kind, message: message.to_string() }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        let kind = match &e {
            LoadError::Io { .. } => "io",
            LoadError::Parse { .. } => "parse",
            LoadError::Resolve { .. } => "resolve",
            LoadError::Invalid { .. } => "invalid",
        };
        CliError::new(kind, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind, e.message);
            ExitCode::FAILURE
        }
    }
}

fn load(path: &PathBuf) -> Result<LoadedScenario, CliError> {
    let loaded = load_scenario(path)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let loaded = load(&scenario)?;
            std::fs::create_dir_all(&out)?;
            let net = loaded.scenario.net.clone();
            let sim = Simulator::new(loaded.scenario)
                .map_err(|e| CliError::new("sim", e))?;
            let output = sim
                .run(&SimConfig::default())
                .map_err(|e| CliError::new("sim", e))?;
            let summary = compute_metrics(&output, &net, DEFAULT_DELAY_THRESHOLD);
            write_contours(&out, &output, &net)?;
            write_links(&out, &net)?;
            write_run_record(&out, &RunRecord::of(&output))?;
            write_metrics(&out, &summary)?;
            write_offramp_comparison(&out, &[])?;
            println!(
                "simulated {} steps; conservation defect {:.3e}; wrote {}",
                output.steps,
                output.conservation_defect(),
                out.display()
            );
            Ok(())
        }
        Command::Calibrate { scenario, targets, out, max_outer, tol } => {
            let loaded = load(&scenario)?;
            let interval_hours = loaded.scenario.demand.interval_hours;
            let targets = load_targets(&targets, &loaded.scenario.net, interval_hours)?;
            std::fs::create_dir_all(&out)?;
            let cfg = CalibrationConfig { tolerance: tol, max_outer, ..Default::default() };
            let outcome =
                run_calibration_loop(&loaded.scenario, &targets, &cfg, &SimConfig::default())
                    .map_err(|e| CliError::new("calibration", e))?;
            let net = &loaded.scenario.net;
            let summary = compute_metrics(&outcome.output, net, DEFAULT_DELAY_THRESHOLD);
            write_contours(&out, &outcome.output, net)?;
            write_links(&out, net)?;
            write_run_record(&out, &RunRecord::of(&outcome.output))?;
            write_metrics(&out, &summary)?;
            write_offramp_comparison(&out, &comparison_rows(&outcome, interval_hours))?;
            let report = render_report(&outcome, net, &summary);
            write_report(&out, &report)?;
            write_betas(&out, &outcome, net)?;
            if outcome.converged {
                println!(
                    "converged after {} outer iteration(s); wrote {}",
                    outcome.outer_iterations,
                    out.display()
                );
            } else {
                eprintln!(
                    "warning: not converged after {} outer iteration(s); best fit written",
                    outcome.outer_iterations
                );
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let loaded = load(&scenario)?;
            println!(
                "valid: {} links, {} nodes, {} classes, {} steps",
                loaded.scenario.net.links.len(),
                loaded.scenario.net.nodes.len(),
                loaded.scenario.net.classes.len(),
                loaded.scenario.steps
            );
            Ok(())
        }
        Command::Metrics { results, threshold } => {
            let summary =
                metrics_from_dir(&results, threshold).map_err(|e| CliError::new("metrics", e))?;
            print!("{}", render_metrics(&summary));
            Ok(())
        }
    }
}
