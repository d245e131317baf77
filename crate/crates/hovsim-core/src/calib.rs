//! Identification of offramp exit fractions from measured exit flows.
//!
//! One offramp, one demand interval: find the exit fraction that makes the
//! node's realized offramp inflow match a measured average. The response of
//! inflow to the fraction is nondecreasing, so a bracketing bisection on the
//! node model solves each (offramp, interval) cell independently. An outer
//! loop then alternates whole-corridor runs with per-cell solves until the
//! realized flows sit within tolerance of the measurements.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::net::{AccessMode, ClassKind, LaneGroup, LinkId, NodeId};
use crate::node::{compute_node_flows, CouplingTable, NodeInputs, SplitTable};
use crate::sim::{
    IntervalStats, OfframpSplitSeries, Scenario, SimConfig, SimError, SimOutput, Simulator,
};

/// Measured average exit flows for one offramp, veh/h per demand interval.
/// The last value persists past the end of the series.
#[derive(Clone, Debug)]
pub struct OfframpTarget {
    pub offramp: LinkId,
    pub flows: Vec<f64>,
    /// Relative flow-match tolerance for this offramp; the loop default
    /// applies when absent.
    pub tolerance: Option<f64>,
}

/// Result of one exit-fraction solve.
#[derive(Clone, Copy, Debug)]
pub struct BetaSolution {
    pub beta: f64,
    /// Even full exiting cannot reach the measurement.
    pub starved: bool,
    /// The committed traffic alone already exceeds the measurement.
    pub excess: bool,
    pub iterations: usize,
    /// Realized minus target at the returned fraction, veh/h.
    pub residual: f64,
}

/// The response failed the bracketing sanity check: positive at the lower
/// end of the range yet negative at the upper end.
#[derive(Clone, Copy, Debug)]
pub struct NonMonotoneResponse;

#[derive(Debug)]
pub enum CalibError {
    /// A corridor run failed; `iteration` is 0 for the initial probe run,
    /// k for the k-th re-run, and `usize::MAX` for the final reporting run.
    Sim { error: SimError, iteration: usize },
    NonMonotone { offramp: LinkId, interval: usize },
    /// The referenced link is not an offramp output of any node.
    UnknownOfframp { offramp: LinkId },
    /// Two measured offramps leave at the same node; their fractions cannot
    /// be separated by this per-node solve.
    SharedNode { node: NodeId },
    /// The offramp's node has no other output, so every fraction produces
    /// the same flow.
    DegenerateNode { node: NodeId },
    EmptyTarget { offramp: LinkId },
}

impl fmt::Display for CalibError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibError::Sim { error, iteration } => {
                if *iteration == usize::MAX {
                    write!(f, "final reporting run: {error}")
                } else {
                    write!(f, "outer iteration {iteration}: {error}")
                }
            }
            CalibError::NonMonotone { offramp, interval } => write!(
                f,
                "offramp #{} interval {interval}: exit flow response is not monotone",
                offramp.0
            ),
            CalibError::UnknownOfframp { offramp } => {
                write!(f, "link #{} is not an offramp output of any node", offramp.0)
            }
            CalibError::SharedNode { node } => {
                write!(f, "node #{} has several measured offramps", node.0)
            }
            CalibError::DegenerateNode { node } => {
                write!(f, "node #{} has no output besides the offramp", node.0)
            }
            CalibError::EmptyTarget { offramp } => {
                write!(f, "offramp #{} has an empty measurement series", offramp.0)
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CalibError {}

/// Frozen picture of one offramp node over one interval, with the exit
/// fraction left as the single unknown.
///
/// `variable` marks the (input, class) pairs the unknown applies to; their
/// `routing` rows hold the relative shares of the non-offramp outputs and
/// scale with the remainder `1 - beta`. Non-variable rows take their
/// `routing` row verbatim, offramp column included.
#[derive(Clone, Debug)]
pub struct OfframpNodeTemplate {
    pub sending: Vec<Vec<f64>>,
    pub receiving: Vec<f64>,
    pub priorities: Vec<f64>,
    pub couplings: CouplingTable,
    /// Output position of the offramp.
    pub offramp: usize,
    pub variable: Vec<Vec<bool>>,
    pub routing: Vec<Vec<Vec<f64>>>,
    /// Bracket the solve from `target / variable sending` instead of zero.
    /// Valid whenever nothing besides the variable rows feeds the offramp.
    pub demand_bracket: bool,
}

impl OfframpNodeTemplate {
    pub fn split_table(&self, beta: f64) -> SplitTable {
        let m = self.sending.len();
        let n = self.receiving.len();
        let c = self.sending.first().map_or(0, Vec::len);
        let mut t = SplitTable::new(m, n, c);
        for i in 0..m {
            for cl in 0..c {
                if self.variable[i][cl] {
                    for j in 0..n {
                        if j == self.offramp {
                            t.set(i, j, cl, beta);
                        } else {
                            t.set(i, j, cl, self.routing[i][cl][j] * (1.0 - beta));
                        }
                    }
                } else {
                    for j in 0..n {
                        t.set(i, j, cl, self.routing[i][cl][j]);
                    }
                }
            }
        }
        t
    }

    /// Realized flow into the offramp at a given exit fraction, veh/h.
    pub fn offramp_inflow(&self, beta: f64) -> f64 {
        let c = self.sending.first().map_or(0, Vec::len);
        let flows = compute_node_flows(&NodeInputs {
            sending: self.sending.clone(),
            receiving: self.receiving.clone(),
            priorities: self.priorities.clone(),
            splits: self.split_table(beta),
            couplings: self.couplings.clone(),
        });
        (0..c).map(|cl| flows.output_inflow(self.offramp, cl)).sum()
    }

    /// Total sending of the rows the unknown fraction applies to.
    pub fn variable_sending(&self) -> f64 {
        let mut s = 0.0;
        for (row, var) in self.sending.iter().zip(&self.variable) {
            for (x, &v) in row.iter().zip(var) {
                if v {
                    s += x;
                }
            }
        }
        s
    }
}

/// Hard cap on bisection steps; the interval shrinks below any practical
/// tolerance long before this.
const MAX_BISECTIONS: usize = 60;

/// Find the exit fraction whose realized offramp inflow matches `target`.
/// `tol` is relative: the residual stop is `tol * max(target, 1)`.
pub fn solve_exit_fraction(
    tpl: &OfframpNodeTemplate,
    target: f64,
    tol: f64,
) -> Result<BetaSolution, NonMonotoneResponse> {
    let tol_abs = tol * target.max(1.0);
    let s_var = tpl.variable_sending();

    if tpl.demand_bracket && s_var <= target {
        // Even sending everything falls short.
        let residual = tpl.offramp_inflow(1.0) - target;
        return Ok(BetaSolution { beta: 1.0, starved: true, excess: false, iterations: 0, residual });
    }
    let lower = if tpl.demand_bracket {
        if s_var > 0.0 {
            (target / s_var).min(1.0)
        } else {
            0.0
        }
    } else {
        0.0
    };

    let psi_low = tpl.offramp_inflow(lower) - target;
    let psi_high = tpl.offramp_inflow(1.0) - target;
    if psi_low > tol_abs && psi_high < -tol_abs {
        return Err(NonMonotoneResponse);
    }
    if psi_low >= 0.0 {
        // The measurement is already met at the bottom of the range.
        let excess = !tpl.demand_bracket && psi_low > tol_abs;
        return Ok(BetaSolution { beta: lower, starved: false, excess, iterations: 0, residual: psi_low });
    }
    if psi_high < 0.0 {
        return Ok(BetaSolution {
            beta: 1.0,
            starved: true,
            excess: false,
            iterations: 0,
            residual: psi_high,
        });
    }

    let (mut lo, mut hi) = (lower, 1.0);
    for it in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = tpl.offramp_inflow(mid) - target;
        if p.abs() <= tol_abs {
            return Ok(BetaSolution { beta: mid, starved: false, excess: false, iterations: it, residual: p });
        }
        if p < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let residual = tpl.offramp_inflow(beta) - target;
    Ok(BetaSolution {
        beta,
        starved: false,
        excess: false,
        iterations: MAX_BISECTIONS,
        residual,
    })
}

/// Build the frozen per-interval solve input for one offramp node from a
/// run's recorded interval means.
pub fn build_template(
    scn: &Scenario,
    node: NodeId,
    stats: &IntervalStats,
    offramp_pos: usize,
) -> OfframpNodeTemplate {
    let net = &scn.net;
    let node_ref = &net.nodes[node.0];
    let m = node_ref.inputs.len();
    let n = node_ref.outputs.len();
    let classes = net.class_count();

    let mut couplings = CouplingTable::full(m, n);
    for r in &node_ref.restrictions {
        let i = node_ref.inputs.iter().position(|&l| l == r.input);
        let jr = node_ref.outputs.iter().position(|&l| l == r.restricting);
        let jd = node_ref.outputs.iter().position(|&l| l == r.restricted);
        if let (Some(i), Some(jr), Some(jd)) = (i, jr, jd) {
            couplings.set(i, jr, jd, r.coefficient);
        }
    }

    let mean_split = |i: usize, j: usize, cl: usize| -> f64 {
        stats.mean_splits[(i * n + j) * classes + cl]
    };

    let mut variable = vec![vec![false; classes]; m];
    let mut routing = vec![vec![vec![0.0; n]; classes]; m];
    for (i, &inp) in node_ref.inputs.iter().enumerate() {
        let group = net.links[inp.0].lane_group;
        let mainline = match net.access {
            AccessMode::Full => group == LaneGroup::Gp || group == LaneGroup::Managed,
            AccessMode::Gated => group == LaneGroup::Gp,
        };
        for (cl, class) in net.classes.iter().enumerate() {
            let committed = matches!(class.kind, ClassKind::Destination(_));
            if mainline && !committed {
                variable[i][cl] = true;
                let mut total = 0.0;
                for j in 0..n {
                    if j != offramp_pos {
                        total += mean_split(i, j, cl);
                    }
                }
                if total > 1e-12 {
                    for j in 0..n {
                        if j != offramp_pos {
                            routing[i][cl][j] = mean_split(i, j, cl) / total;
                        }
                    }
                } else {
                    // Nothing recorded away from the offramp; spread evenly.
                    let share = 1.0 / (n - 1) as f64;
                    for j in 0..n {
                        if j != offramp_pos {
                            routing[i][cl][j] = share;
                        }
                    }
                }
            } else {
                for j in 0..n {
                    routing[i][cl][j] = mean_split(i, j, cl);
                }
            }
        }
    }

    OfframpNodeTemplate {
        sending: stats.mean_sending.clone(),
        receiving: stats.mean_receiving.clone(),
        priorities: node_ref.priorities.clone(),
        couplings,
        offramp: offramp_pos,
        variable,
        routing,
        demand_bracket: net.access == AccessMode::Full,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CalibrationConfig {
    /// Relative flow tolerance for convergence.
    pub tolerance: f64,
    /// Corridor runs before giving up.
    pub max_outer: usize,
    /// Relative residual tolerance of each inner bisection.
    pub exit_tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { tolerance: 0.005, max_outer: 8, exit_tolerance: 1e-6 }
    }
}

/// One calibrated (offramp, interval) cell of the final report.
#[derive(Clone, Copy, Debug)]
pub struct IntervalSolution {
    pub beta: f64,
    pub target: f64,
    /// Interval-mean realized exit flow of the reported run, veh/h.
    pub realized: f64,
    pub starved: bool,
    pub excess: bool,
}

#[derive(Clone, Debug)]
pub struct OfframpCalibration {
    pub offramp: LinkId,
    pub node: NodeId,
    pub intervals: Vec<IntervalSolution>,
}

/// Static sanity findings about the measurements themselves.
#[derive(Clone, Copy, Debug)]
pub enum CalibrationWarning {
    /// The measured flow meets or exceeds the offramp's own capacity, so
    /// the exit is supply-restricted and the fraction cannot reproduce it.
    TargetAboveSupply { offramp: LinkId, interval: usize, target: f64, capacity: f64 },
}

#[derive(Debug)]
pub struct CalibrationOutcome {
    pub converged: bool,
    /// Solve-and-rerun cycles applied after the initial probe run.
    pub outer_iterations: usize,
    pub offramps: Vec<OfframpCalibration>,
    /// The identified split series, ready to drop into a scenario.
    pub betas: Vec<OfframpSplitSeries>,
    /// Largest unflagged relative flow mismatch of each corridor run,
    /// initial probe first.
    pub residual_norms: Vec<f64>,
    pub warnings: Vec<CalibrationWarning>,
    /// Output of the final run at the identified splits.
    pub output: SimOutput,
}

fn intervals_of(scn: &Scenario) -> usize {
    let ratio = scn.demand.interval_hours / scn.dt_hours;
    let per = if ratio >= 1.0 { (ratio + 0.5) as usize } else { 1 };
    scn.steps.div_ceil(per.max(1)).max(1)
}

/// Replace or append the series for each calibrated offramp, preserving any
/// series the scenario carries for other offramps.
fn merge_splits(base: &[OfframpSplitSeries], solved: &[OfframpSplitSeries]) -> Vec<OfframpSplitSeries> {
    let mut out: Vec<OfframpSplitSeries> = base
        .iter()
        .filter(|s| solved.iter().all(|n| n.offramp != s.offramp))
        .cloned()
        .collect();
    out.extend(solved.iter().cloned());
    out
}

/// Identify exit fractions for the measured offramps.
///
/// Starts every fraction at 0.1, runs the corridor, re-solves each
/// (offramp, interval) cell against the run's interval means, and repeats
/// until every unflagged cell's realized flow is within tolerance of its
/// measurement. Cells flagged starved or excess are reported but excluded
/// from the convergence test, since their measurements are unattainable.
pub fn run_calibration_loop(
    base: &Scenario,
    targets: &[OfframpTarget],
    cfg: &CalibrationConfig,
    final_config: &SimConfig,
) -> Result<CalibrationOutcome, CalibError> {
    let net = &base.net;
    let n_intervals = intervals_of(base);

    // Resolve each measured offramp to its node up front.
    let mut nodes = Vec::with_capacity(targets.len());
    for t in targets {
        if t.flows.is_empty() {
            return Err(CalibError::EmptyTarget { offramp: t.offramp });
        }
        let ok_link = net
            .links
            .get(t.offramp.0)
            .is_some_and(|l| l.lane_group == LaneGroup::Offramp);
        let node = net
            .nodes
            .iter()
            .position(|n| n.outputs.contains(&t.offramp))
            .filter(|_| ok_link)
            .ok_or(CalibError::UnknownOfframp { offramp: t.offramp })?;
        let node_ref = &net.nodes[node];
        if node_ref.outputs.len() < 2 {
            return Err(CalibError::DegenerateNode { node: NodeId(node) });
        }
        let measured_here = targets
            .iter()
            .filter(|o| node_ref.outputs.contains(&o.offramp))
            .count();
        if measured_here > 1 {
            return Err(CalibError::SharedNode { node: NodeId(node) });
        }
        nodes.push(NodeId(node));
    }

    let target_at = |t: &OfframpTarget, k: usize| -> f64 { t.flows[k.min(t.flows.len() - 1)] };

    // Measurements at or above the exit's own capacity cannot come from any
    // split choice; say so up front rather than iterating toward them.
    let mut warnings = Vec::new();
    for t in targets {
        let capacity = net.links[t.offramp.0].fd.capacity;
        for (k, &f) in t.flows.iter().enumerate() {
            if f >= capacity {
                warnings.push(CalibrationWarning::TargetAboveSupply {
                    offramp: t.offramp,
                    interval: k,
                    target: f,
                    capacity,
                });
            }
        }
    }

    let mut betas: Vec<OfframpSplitSeries> = targets
        .iter()
        .map(|t| OfframpSplitSeries { offramp: t.offramp, betas: vec![0.1; n_intervals] })
        .collect();
    let probe_config = SimConfig { record_contours: false, record_offramp_stats: true };

    let mut converged = false;
    let mut outer_iterations = 0;
    let mut report: Vec<OfframpCalibration> = Vec::new();
    let mut residual_norms = Vec::new();

    loop {
        let mut scn = base.clone();
        scn.offramp_splits = merge_splits(&base.offramp_splits, &betas);
        let run_err = |error| CalibError::Sim { error, iteration: outer_iterations };
        let out = Simulator::new(scn)
            .map_err(run_err)?
            .run(&probe_config)
            .map_err(run_err)?;

        // Solve every (offramp, interval) cell against this run's interval
        // means, and measure how far the run's realized exit flows sit from
        // the measurements.
        let mut all_within = true;
        let mut norm: f64 = 0.0;
        let mut next: Vec<OfframpSplitSeries> = betas.clone();
        report.clear();
        for ((t, &node), series) in targets.iter().zip(&nodes).zip(&betas) {
            let tol = t.tolerance.unwrap_or(cfg.tolerance);
            let stats = out
                .offramp_stats
                .iter()
                .find(|s| s.node == node)
                .expect("recording covers every offramp node");
            let off_pos = stats
                .outputs
                .iter()
                .position(|&l| l == t.offramp)
                .expect("offramp resolved to this node");
            let off_slot = stats
                .offramp_positions
                .iter()
                .position(|&p| p == off_pos)
                .expect("offramp outputs are all recorded");

            let mut cells = Vec::with_capacity(stats.intervals.len());
            for (k, iv) in stats.intervals.iter().enumerate() {
                let target = target_at(t, k);
                let tpl = build_template(base, node, iv, off_pos);
                let sol = solve_exit_fraction(&tpl, target, cfg.exit_tolerance)
                    .map_err(|NonMonotoneResponse| CalibError::NonMonotone {
                        offramp: t.offramp,
                        interval: k,
                    })?;
                let realized = iv.mean_offramp_flow[off_slot];
                if !(sol.starved || sol.excess) {
                    let rel = (realized - target).abs() / target.max(1.0);
                    norm = norm.max(rel);
                    if rel > tol {
                        all_within = false;
                    }
                }
                let series_beta = series.betas[k.min(series.betas.len() - 1)];
                cells.push(IntervalSolution {
                    beta: series_beta,
                    target,
                    realized,
                    starved: sol.starved,
                    excess: sol.excess,
                });
                let slot = next
                    .iter_mut()
                    .find(|s| s.offramp == t.offramp)
                    .expect("series exists for every target");
                slot.betas[k] = sol.beta;
            }
            report.push(OfframpCalibration { offramp: t.offramp, node, intervals: cells });
        }
        residual_norms.push(norm);

        if all_within {
            converged = true;
            break;
        }
        if outer_iterations == cfg.max_outer {
            break;
        }
        outer_iterations += 1;
        betas = next;
    }

    let mut scn = base.clone();
    scn.offramp_splits = merge_splits(&base.offramp_splits, &betas);
    let run_err = |error| CalibError::Sim { error, iteration: usize::MAX };
    let output = Simulator::new(scn)
        .map_err(run_err)?
        .run(final_config)
        .map_err(run_err)?;
    Ok(CalibrationOutcome {
        converged,
        outer_iterations,
        offramps: report,
        betas,
        residual_norms,
        warnings,
        output,
    })
}
