//! Time-stepping engine.
//!
//! A [`Scenario`] pairs a network with a demand program, a step size, and the
//! per-interval offramp split ratios. [`Simulator`] advances it with a fixed
//! stage order per step: refresh friction from last step's general-purpose
//! speeds, relabel managed-lane traffic at the gates, evaluate every link's
//! demand and supply, complete any split ratios the scenario leaves open,
//! resolve the node flows, and integrate the densities. Origins are vertical
//! queues that offer their whole content plus the step's arrivals; exit links
//! drain at their own sending rate.
//!
//! The engine is deterministic: the same scenario produces bit-identical
//! results on every run.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::link::{
    apply_friction, compute_demand_into, compute_supply, link_speed, update_metastate, LinkState,
};
use crate::net::{
    check_cfl, gate_segments, validate_network, AccessMode, ClassId, ClassKind, LaneGroup,
    LinkId, LinkRole, Network, NodeId, Severity, Topology, ValidationReport, Violation,
};
use crate::node::{
    compute_node_flows, solve_undefined_split_ratios, CouplingTable, NoBias, NodeInputs,
    SplitTable,
};

/// Offramp exit fractions over time. `betas` is indexed by demand interval;
/// the last value persists past the end of the series, an empty series means
/// nobody exits.
#[derive(Clone, Debug)]
pub struct OfframpSplitSeries {
    pub offramp: LinkId,
    pub betas: Vec<f64>,
}

/// Fixed managed-lane exit commitments for one gate, aligned with the
/// driving-order offramps of the gate's segment. When absent the shares are
/// derived each interval from the offramp split series.
#[derive(Clone, Debug)]
pub struct GateShares {
    pub gate: NodeId,
    pub shares: Vec<f64>,
}

/// A complete simulation input.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub net: Network,
    pub demand: crate::net::DemandProfile,
    /// Step size, hours.
    pub dt_hours: f64,
    pub steps: usize,
    /// Initial per-class densities, `[link][class]`; empty means empty roads.
    pub initial_densities: Vec<Vec<f64>>,
    pub offramp_splits: Vec<OfframpSplitSeries>,
    pub gate_shares: Vec<GateShares>,
}

/// What [`Simulator::run`] should keep.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    /// Record per-link, per-step density, outflow, and speed.
    pub record_contours: bool,
    /// Record interval statistics at nodes with offramp outputs, as needed to
    /// identify offramp splits from measured exit flows.
    pub record_offramp_stats: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { record_contours: true, record_offramp_stats: true }
    }
}

#[derive(Clone, Debug)]
pub enum SimError {
    /// The scenario failed static validation.
    Invalid(ValidationReport),
    /// A link density left the physical range, which indicates an
    /// inconsistent network rather than heavy congestion.
    DensityOvershoot { link: LinkId, step: usize, density: f64, jam_density: f64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Invalid(report) => {
                let errors = report.violations.iter().filter(|v| v.severity == Severity::Error);
                let mut first = true;
                for v in errors {
                    if !first {
                        writeln!(f)?;
                    }
                    write!(f, "{v}")?;
                    first = false;
                }
                if first {
                    write!(f, "scenario failed validation")?;
                }
                Ok(())
            }
            SimError::DensityOvershoot { link, step, density, jam_density } => write!(
                f,
                "link #{} exceeded jam density at step {step}: {density} > {jam_density}",
                link.0
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

/// Interval-mean observations at one node, `[input][class]` and `[output]`
/// shaped like the node's link lists.
#[derive(Clone, Debug)]
pub struct IntervalStats {
    pub steps: usize,
    pub mean_sending: Vec<Vec<f64>>,
    pub mean_receiving: Vec<f64>,
    /// Mean of the split ratios actually applied, flattened
    /// `[input][output][class]`.
    pub mean_splits: Vec<f64>,
    /// Mean realized inflow of each offramp output, veh/h, aligned with
    /// [`OfframpNodeStats::offramp_positions`].
    pub mean_offramp_flow: Vec<f64>,
}

/// Per-interval record of one offramp node.
#[derive(Clone, Debug)]
pub struct OfframpNodeStats {
    pub node: NodeId,
    pub inputs: Vec<LinkId>,
    pub outputs: Vec<LinkId>,
    /// Positions of the offramp links within `outputs`.
    pub offramp_positions: Vec<usize>,
    pub intervals: Vec<IntervalStats>,
}

/// Everything a finished run reports.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub dt_hours: f64,
    pub steps: usize,
    pub interval_steps: usize,
    /// Per-link, per-step total density at the start of the step, veh/mi.
    pub density: Vec<Vec<f64>>,
    /// Per-link, per-step realized outflow, veh/h.
    pub flow: Vec<Vec<f64>>,
    /// Per-link, per-step space-mean speed, mph.
    pub speed: Vec<Vec<f64>>,
    /// Per-class densities at the end of the run.
    pub final_densities: Vec<Vec<f64>>,
    /// Vehicles entered through origins.
    pub injected: f64,
    /// Vehicles that left through exit links.
    pub discharged: f64,
    pub stored_initial: f64,
    pub stored_final: f64,
    /// Vehicles created by clamping numerical undershoot; stays at rounding
    /// scale on well-posed scenarios.
    pub clamped_negative: f64,
    pub offramp_stats: Vec<OfframpNodeStats>,
}

impl SimOutput {
    /// Signed conservation defect in vehicles: entered minus what is stored
    /// or gone, after removing clamp corrections.
    pub fn conservation_defect(&self) -> f64 {
        self.injected + self.stored_initial + self.clamped_negative
            - self.stored_final
            - self.discharged
    }
}

struct GateInfo {
    ml_input: LinkId,
    /// Destination classes for the segment's offramps, driving order.
    dest_classes: Vec<ClassId>,
    /// Offramps of the segment, driving order.
    offramps: Vec<LinkId>,
    explicit_shares: Option<Vec<f64>>,
}

/// The running engine. Build one with [`Simulator::new`], then either call
/// [`Simulator::run`] or drive it step by step.
pub struct Simulator {
    scn: Scenario,
    topo: Topology,
    interval_steps: usize,
    intervals: usize,
    eligible: Option<ClassId>,
    gates: Vec<GateInfo>,
    couplings: Vec<CouplingTable>,
    /// Per interval, per node: structural plus scenario-known splits.
    tables: Vec<Vec<SplitTable>>,
    /// Per interval, per gate: managed-lane exit shares.
    shares: Vec<Vec<Vec<f64>>>,
    /// Per link, per class, per interval demand rate, veh/h.
    demand: Vec<Vec<Vec<f64>>>,

    state: Vec<LinkState>,
    speeds: Vec<f64>,
    effective: Vec<crate::net::FundamentalDiagram>,
    sending: Vec<Vec<f64>>,
    receiving: Vec<f64>,
    inflow: Vec<Vec<f64>>,
    outflow: Vec<Vec<f64>>,
    /// Split tables actually applied this step, for recording.
    applied: Vec<SplitTable>,
    step_index: usize,
    injected: f64,
    discharged: f64,
    clamped: f64,
    stored_initial: f64,
}

const SHARE_SUM_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;
const DENSITY_OVERSHOOT_TOL: f64 = 1e-6;

/// Check everything about a scenario that can be checked without running it:
/// the network itself, the step-size condition, demand shape, split series,
/// gate shares, and initial densities.
pub fn validate_scenario(scn: &Scenario) -> ValidationReport {
    let mut rep = validate_network(&scn.net);
    for v in check_cfl(&scn.net, scn.dt_hours).violations {
        rep.violations.push(v);
    }
    let mut push = |severity: Severity, code: &'static str, message: String| {
        rep.violations.push(Violation { severity, code, message });
    };

    if !(scn.dt_hours > 0.0) {
        push(Severity::Error, "nonpositive-step", String::from("time step must be positive"));
    }
    if scn.steps == 0 {
        push(Severity::Warning, "empty-run", String::from("scenario runs for zero steps"));
    }
    let iv = scn.demand.interval_hours;
    if !(iv > 0.0) {
        push(
            Severity::Error,
            "demand-interval",
            String::from("demand interval must be positive"),
        );
    } else if scn.dt_hours > 0.0 {
        let ratio = iv / scn.dt_hours;
        if (ratio - round_nearest(ratio)).abs() > 1e-9 * ratio.max(1.0) || ratio < 0.5 {
            push(
                Severity::Error,
                "demand-interval",
                format!(
                    "demand interval ({iv} h) must be a whole multiple of the step ({} h)",
                    scn.dt_hours
                ),
            );
        }
    }
    if !(0.0..=1.0).contains(&scn.demand.eligible_fraction) {
        push(
            Severity::Error,
            "eligible-fraction",
            String::from("eligible fraction must lie in [0, 1]"),
        );
    }
    for e in &scn.demand.entries {
        match scn.net.links.get(e.origin.0) {
            None => push(
                Severity::Error,
                "bad-demand-ref",
                format!("demand references missing link #{}", e.origin.0),
            ),
            Some(l) if l.role != LinkRole::Origin => push(
                Severity::Error,
                "bad-demand-ref",
                format!("demand targets `{}`, which is not an origin", l.name),
            ),
            Some(_) => {}
        }
        if e.class.0 >= scn.net.classes.len() {
            push(
                Severity::Error,
                "bad-demand-ref",
                format!("demand references missing class #{}", e.class.0),
            );
        }
        if e.flows.iter().any(|&f| !(f >= 0.0)) {
            push(
                Severity::Error,
                "negative-demand",
                String::from("demand rates must be nonnegative"),
            );
        }
    }
    for s in &scn.offramp_splits {
        match scn.net.links.get(s.offramp.0) {
            None => push(
                Severity::Error,
                "bad-split-series",
                format!("split series references missing link #{}", s.offramp.0),
            ),
            Some(l) if l.lane_group != LaneGroup::Offramp => push(
                Severity::Error,
                "bad-split-series",
                format!("split series targets `{}`, which is not an offramp", l.name),
            ),
            Some(_) => {}
        }
        if s.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            push(
                Severity::Error,
                "beta-range",
                String::from("offramp split ratios must lie in [0, 1]"),
            );
        }
    }
    let segments = gate_segments(&scn.net).unwrap_or_default();
    for g in &scn.gate_shares {
        let Some(node) = scn.net.nodes.get(g.gate.0) else {
            push(
                Severity::Error,
                "bad-gate-ref",
                format!("gate shares reference missing node #{}", g.gate.0),
            );
            continue;
        };
        if !node.is_gate {
            push(
                Severity::Error,
                "bad-gate-ref",
                format!("node `{}` is not a gate", node.name),
            );
            continue;
        }
        let seg = segments.iter().find(|s| s.gate == g.gate);
        if let Some(seg) = seg {
            if g.shares.len() != seg.offramps.len() {
                push(
                    Severity::Error,
                    "share-shape",
                    format!(
                        "gate `{}` has {} reachable offramps but {} shares",
                        node.name,
                        seg.offramps.len(),
                        g.shares.len()
                    ),
                );
            }
        }
        if g.shares.iter().any(|s| !(s >= &0.0)) {
            push(
                Severity::Error,
                "share-range",
                format!("gate `{}` has a negative exit share", node.name),
            );
        }
        let total: f64 = g.shares.iter().sum();
        if total > 1.0 + SHARE_SUM_TOL {
            push(
                Severity::Error,
                "share-overflow",
                format!("gate `{}` exit shares sum to {total}", node.name),
            );
        }
    }
    if !scn.initial_densities.is_empty() {
        if scn.initial_densities.len() != scn.net.links.len() {
            push(
                Severity::Error,
                "initial-shape",
                String::from("initial densities must cover every link"),
            );
        } else {
            for (i, row) in scn.initial_densities.iter().enumerate() {
                if row.len() != scn.net.classes.len() {
                    push(
                        Severity::Error,
                        "initial-shape",
                        format!("initial densities for link #{i} must cover every class"),
                    );
                    continue;
                }
                if row.iter().any(|&d| !(d >= 0.0)) {
                    push(
                        Severity::Error,
                        "initial-range",
                        format!("initial densities for link #{i} must be nonnegative"),
                    );
                }
                let total: f64 = row.iter().sum();
                let l = &scn.net.links[i];
                if l.role != LinkRole::Origin && total > l.fd.jam_density * (1.0 + 1e-9) {
                    push(
                        Severity::Error,
                        "initial-range",
                        format!("initial density on link #{i} exceeds jam density"),
                    );
                }
            }
        }
    }
    rep
}

// Round half away from zero; enough for ratio snapping.
fn round_nearest(x: f64) -> f64 {
    if x >= 0.0 {
        (x + 0.5) as i64 as f64
    } else {
        (x - 0.5) as i64 as f64
    }
}

impl Simulator {
    pub fn new(scn: Scenario) -> Result<Self, SimError> {
        let report = validate_scenario(&scn);
        if report.has_errors() {
            return Err(SimError::Invalid(report));
        }
        let net = &scn.net;
        let links = net.links.len();
        let classes = net.class_count();
        let topo = net.topology();
        let eligible = net.eligible_class();

        let interval_steps =
            round_nearest(scn.demand.interval_hours / scn.dt_hours).max(1.0) as usize;
        let intervals = scn.steps.div_ceil(interval_steps).max(1);

        // Demand lookup, zero beyond the given series.
        let mut demand = vec![vec![vec![0.0f64; intervals]; classes]; links];
        for e in &scn.demand.entries {
            for (k, &f) in e.flows.iter().enumerate().take(intervals) {
                demand[e.origin.0][e.class.0][k] += f;
            }
        }

        // Offramp split value per (link, interval); last value persists.
        let beta_at = |off: LinkId, interval: usize| -> f64 {
            scn.offramp_splits
                .iter()
                .find(|s| s.offramp == off)
                .map(|s| match s.betas.len() {
                    0 => 0.0,
                    n => s.betas[interval.min(n - 1)],
                })
                .unwrap_or(0.0)
        };

        let segments = gate_segments(net).map_err(|e| {
            let mut rep = ValidationReport::default();
            rep.violations.push(Violation {
                severity: Severity::Error,
                code: "gate-topology",
                message: format!("{e}"),
            });
            SimError::Invalid(rep)
        })?;
        let mut gates = Vec::new();
        for seg in &segments {
            let node = &net.nodes[seg.gate.0];
            let ml_input = *node
                .inputs
                .iter()
                .find(|&&l| net.links[l.0].lane_group == LaneGroup::Managed)
                .expect("gate validation guarantees a managed input");
            let dest_classes = seg
                .offramps
                .iter()
                .map(|&o| {
                    net.destination_class_for(o)
                        .expect("validation guarantees destination coverage")
                })
                .collect();
            let explicit_shares = scn
                .gate_shares
                .iter()
                .find(|g| g.gate == seg.gate)
                .map(|g| g.shares.clone());
            gates.push(GateInfo {
                ml_input,
                dest_classes,
                offramps: seg.offramps.clone(),
                explicit_shares,
            });
        }

        // Exit shares per interval per gate; derived shares follow the chance
        // of surviving each upstream offramp.
        let mut shares = Vec::with_capacity(intervals);
        for interval in 0..intervals {
            let mut per_gate = Vec::with_capacity(gates.len());
            for g in &gates {
                let s = match &g.explicit_shares {
                    Some(explicit) => explicit.clone(),
                    None => {
                        let mut out = Vec::with_capacity(g.offramps.len());
                        let mut stay = 1.0;
                        for &o in &g.offramps {
                            let b = beta_at(o, interval);
                            out.push(b * stay);
                            stay *= 1.0 - b;
                        }
                        out
                    }
                };
                per_gate.push(s);
            }
            shares.push(per_gate);
        }

        let couplings = net
            .nodes
            .iter()
            .map(|node| {
                let mut t = CouplingTable::full(node.inputs.len(), node.outputs.len());
                for r in &node.restrictions {
                    let i = node.inputs.iter().position(|&l| l == r.input);
                    let jr = node.outputs.iter().position(|&l| l == r.restricting);
                    let jd = node.outputs.iter().position(|&l| l == r.restricted);
                    if let (Some(i), Some(jr), Some(jd)) = (i, jr, jd) {
                        t.set(i, jr, jd, r.coefficient);
                    }
                }
                t
            })
            .collect();

        // Full per-interval split tables so conflicts surface before stepping.
        let mut tables = Vec::with_capacity(intervals);
        let mut assembly = ValidationReport::default();
        for interval in 0..intervals {
            let mut per_node = Vec::with_capacity(net.nodes.len());
            for (n, node) in net.nodes.iter().enumerate() {
                let mut t = structural_splits(net, NodeId(n));
                // Offramp exit fractions for the non-committed classes.
                for (jj, &out) in node.outputs.iter().enumerate() {
                    if net.links[out.0].lane_group != LaneGroup::Offramp {
                        continue;
                    }
                    let beta = beta_at(out, interval);
                    for (ii, &inp) in node.inputs.iter().enumerate() {
                        let g = net.links[inp.0].lane_group;
                        if g != LaneGroup::Gp && g != LaneGroup::Managed {
                            continue;
                        }
                        for (c, class) in net.classes.iter().enumerate() {
                            if matches!(class.kind, ClassKind::Destination(_)) {
                                continue;
                            }
                            if t.get(ii, jj, c).is_none() {
                                t.set(ii, jj, c, beta);
                            }
                        }
                    }
                }
                for s in &node.known_splits {
                    let ii = node.inputs.iter().position(|&l| l == s.input);
                    let jj = node.outputs.iter().position(|&l| l == s.output);
                    if let (Some(ii), Some(jj)) = (ii, jj) {
                        if t.get(ii, jj, s.class.0).is_none() {
                            t.set(ii, jj, s.class.0, s.value);
                        }
                    }
                }
                check_row_sums(net, NodeId(n), &t, interval, &mut assembly);
                per_node.push(t);
            }
            tables.push(per_node);
        }
        if assembly.has_errors() {
            return Err(SimError::Invalid(assembly));
        }

        let mut state: Vec<LinkState> =
            (0..links).map(|_| LinkState::new(classes)).collect();
        if !scn.initial_densities.is_empty() {
            for (s, row) in state.iter_mut().zip(&scn.initial_densities) {
                s.densities.copy_from_slice(row);
            }
        }
        for (s, l) in state.iter_mut().zip(&net.links) {
            s.congested = update_metastate(&l.fd, s.total_density(), false);
        }
        let stored_initial: f64 =
            state.iter().zip(&net.links).map(|(s, l)| s.total_density() * l.length).sum();
        let speeds = net.links.iter().map(|l| l.fd.free_flow).collect();
        let effective = net.links.iter().map(|l| l.fd).collect();
        let sending = vec![vec![0.0; classes]; links];
        let applied = net
            .nodes
            .iter()
            .map(|n| SplitTable::new(n.inputs.len(), n.outputs.len(), classes))
            .collect();

        Ok(Simulator {
            topo,
            interval_steps,
            intervals,
            eligible,
            gates,
            couplings,
            tables,
            shares,
            demand,
            state,
            speeds,
            effective,
            sending,
            receiving: vec![0.0; links],
            inflow: vec![vec![0.0; classes]; links],
            outflow: vec![vec![0.0; classes]; links],
            applied,
            step_index: 0,
            injected: 0.0,
            discharged: 0.0,
            clamped: 0.0,
            stored_initial,
            scn,
        })
    }

    pub fn state(&self) -> &[LinkState] {
        &self.state
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    /// Realized per-class outflow of each link during the last step, veh/h.
    pub fn last_outflow(&self) -> &[Vec<f64>] {
        &self.outflow
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    fn interval(&self, step: usize) -> usize {
        (step / self.interval_steps).min(self.intervals - 1)
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<(), SimError> {
        let net = &self.scn.net;
        let classes = net.class_count();
        let dt = self.scn.dt_hours;
        let t = self.step_index;
        let interval = self.interval(t);

        // Friction from last step's general-purpose speeds.
        for (i, l) in net.links.iter().enumerate() {
            self.effective[i] = match l.gp_partner {
                Some(p) if l.friction > 0.0 => {
                    apply_friction(&l.fd, l.friction, self.speeds[p.0])
                }
                _ => l.fd,
            };
        }

        // Relabel managed-lane traffic entering each gate: pool the committed
        // classes back into the eligible class, then carve out this
        // interval's exit commitments.
        if let Some(ClassId(e)) = self.eligible {
            for (g, gate) in self.gates.iter().enumerate() {
                let shares = &self.shares[interval][g];
                let st = &mut self.state[gate.ml_input.0];
                let mut pool = st.densities[e];
                for &ClassId(d) in &gate.dest_classes {
                    pool += st.densities[d];
                    st.densities[d] = 0.0;
                }
                let committed: f64 = shares.iter().sum();
                st.densities[e] = pool * (1.0 - committed);
                for (&ClassId(d), &s) in gate.dest_classes.iter().zip(shares) {
                    st.densities[d] = pool * s;
                }
            }
        }

        // Demands and supplies.
        for (i, l) in net.links.iter().enumerate() {
            if l.role == LinkRole::Origin {
                let queue_rate = l.length / dt;
                for c in 0..classes {
                    self.sending[i][c] =
                        self.state[i].densities[c] * queue_rate + self.demand[i][c][interval];
                }
            } else {
                compute_demand_into(
                    &self.effective[i],
                    &self.state[i].densities,
                    &mut self.sending[i],
                );
                self.receiving[i] = compute_supply(
                    &self.effective[i],
                    self.state[i].total_density(),
                    self.state[i].congested,
                );
            }
        }

        for row in self.inflow.iter_mut().chain(self.outflow.iter_mut()) {
            for x in row.iter_mut() {
                *x = 0.0;
            }
        }

        // Node flows.
        for (n, node) in net.nodes.iter().enumerate() {
            let sending: Vec<Vec<f64>> =
                node.inputs.iter().map(|&l| self.sending[l.0].clone()).collect();
            let receiving: Vec<f64> = node.outputs.iter().map(|&l| self.receiving[l.0]).collect();
            let base = &self.tables[interval][n];
            let splits = if base.is_fully_defined() {
                base.clone()
            } else {
                solve_undefined_split_ratios(
                    &sending,
                    &receiving,
                    &node.priorities,
                    base,
                    &NoBias,
                )
            };
            let flows = compute_node_flows(&NodeInputs {
                sending,
                receiving,
                priorities: node.priorities.clone(),
                splits: splits.clone(),
                couplings: self.couplings[n].clone(),
            });
            for (pos, &l) in node.inputs.iter().enumerate() {
                for c in 0..classes {
                    self.outflow[l.0][c] += flows.input_outflow(pos, c);
                }
            }
            for (pos, &l) in node.outputs.iter().enumerate() {
                for c in 0..classes {
                    self.inflow[l.0][c] += flows.output_inflow(pos, c);
                }
            }
            self.applied[n] = splits;
        }

        // Boundaries: origins receive their arrivals, exits drain themselves.
        for (i, l) in net.links.iter().enumerate() {
            match l.role {
                LinkRole::Origin => {
                    for c in 0..classes {
                        let d = self.demand[i][c][interval];
                        self.inflow[i][c] = d;
                        self.injected += d * dt;
                    }
                }
                LinkRole::Destination => {
                    for c in 0..classes {
                        self.outflow[i][c] = self.sending[i][c];
                        self.discharged += self.sending[i][c] * dt;
                    }
                }
                LinkRole::Ordinary => {}
            }
        }

        // Integrate densities, then refresh metastates and speeds.
        for (i, l) in net.links.iter().enumerate() {
            let scale = dt / l.length;
            let before = self.state[i].total_density();
            let mut outflow_total = 0.0;
            for c in 0..classes {
                outflow_total += self.outflow[i][c];
                let next = self.state[i].densities[c]
                    + scale * (self.inflow[i][c] - self.outflow[i][c]);
                if next < 0.0 {
                    self.clamped += -next * l.length;
                    self.state[i].densities[c] = 0.0;
                } else {
                    self.state[i].densities[c] = next;
                }
            }
            let total = self.state[i].total_density();
            if l.role != LinkRole::Origin {
                if total > l.fd.jam_density + DENSITY_OVERSHOOT_TOL {
                    return Err(SimError::DensityOvershoot {
                        link: LinkId(i),
                        step: t,
                        density: total,
                        jam_density: l.fd.jam_density,
                    });
                }
                self.state[i].congested =
                    update_metastate(&self.effective[i], total, self.state[i].congested);
                self.speeds[i] = link_speed(&self.effective[i], outflow_total, before);
            } else {
                self.speeds[i] = l.fd.free_flow;
            }
        }

        self.step_index += 1;
        Ok(())
    }

    /// Run the whole scenario.
    pub fn run(mut self, config: &SimConfig) -> Result<SimOutput, SimError> {
        let net_links = self.scn.net.links.len();
        let steps = self.scn.steps;
        let classes = self.scn.net.class_count();
        let mut density = Vec::new();
        let mut flow = Vec::new();
        let mut speed = Vec::new();
        if config.record_contours {
            density = vec![vec![0.0; steps]; net_links];
            flow = vec![vec![0.0; steps]; net_links];
            speed = vec![vec![0.0; steps]; net_links];
        }

        // Accumulators for offramp-node statistics.
        struct Acc {
            node: usize,
            steps: usize,
            sending: Vec<Vec<f64>>,
            receiving: Vec<f64>,
            splits: Vec<f64>,
            offramp_flow: Vec<f64>,
        }
        let mut stats: Vec<OfframpNodeStats> = Vec::new();
        let mut accs: Vec<Acc> = Vec::new();
        if config.record_offramp_stats {
            for (n, node) in self.scn.net.nodes.iter().enumerate() {
                let offramp_positions: Vec<usize> = node
                    .outputs
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| self.scn.net.links[l.0].lane_group == LaneGroup::Offramp)
                    .map(|(pos, _)| pos)
                    .collect();
                if offramp_positions.is_empty() {
                    continue;
                }
                stats.push(OfframpNodeStats {
                    node: NodeId(n),
                    inputs: node.inputs.clone(),
                    outputs: node.outputs.clone(),
                    offramp_positions: offramp_positions.clone(),
                    intervals: Vec::new(),
                });
                accs.push(Acc {
                    node: n,
                    steps: 0,
                    sending: vec![vec![0.0; classes]; node.inputs.len()],
                    receiving: vec![0.0; node.outputs.len()],
                    splits: vec![0.0; node.inputs.len() * node.outputs.len() * classes],
                    offramp_flow: vec![0.0; offramp_positions.len()],
                });
            }
        }
        let flush = |acc: &mut Acc, stats: &mut OfframpNodeStats| {
            if acc.steps == 0 {
                return;
            }
            let k = acc.steps as f64;
            stats.intervals.push(IntervalStats {
                steps: acc.steps,
                mean_sending: acc
                    .sending
                    .iter()
                    .map(|row| row.iter().map(|x| x / k).collect())
                    .collect(),
                mean_receiving: acc.receiving.iter().map(|x| x / k).collect(),
                mean_splits: acc.splits.iter().map(|x| x / k).collect(),
                mean_offramp_flow: acc.offramp_flow.iter().map(|x| x / k).collect(),
            });
            acc.steps = 0;
            for row in acc.sending.iter_mut() {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
            acc.receiving.iter_mut().for_each(|x| *x = 0.0);
            acc.splits.iter_mut().for_each(|x| *x = 0.0);
            acc.offramp_flow.iter_mut().for_each(|x| *x = 0.0);
        };

        for t in 0..steps {
            if config.record_contours {
                for i in 0..net_links {
                    density[i][t] = self.state[i].total_density();
                }
            }
            self.step()?;
            if config.record_contours {
                for i in 0..net_links {
                    flow[i][t] = self.outflow[i].iter().sum();
                    speed[i][t] = self.speeds[i];
                }
            }
            for (acc, st) in accs.iter_mut().zip(stats.iter_mut()) {
                let node = &self.scn.net.nodes[acc.node];
                let classes = self.scn.net.class_count();
                for (pos, &l) in node.inputs.iter().enumerate() {
                    for c in 0..classes {
                        acc.sending[pos][c] += self.sending[l.0][c];
                    }
                }
                for (pos, &l) in node.outputs.iter().enumerate() {
                    acc.receiving[pos] += self.receiving[l.0];
                }
                let table = &self.applied[acc.node];
                let mut k = 0;
                for i in 0..node.inputs.len() {
                    for j in 0..node.outputs.len() {
                        for c in 0..classes {
                            acc.splits[k] += table.get(i, j, c).unwrap_or(0.0);
                            k += 1;
                        }
                    }
                }
                for (slot, &pos) in acc.offramp_flow.iter_mut().zip(&st.offramp_positions) {
                    let l = node.outputs[pos];
                    *slot += self.inflow[l.0].iter().sum::<f64>();
                }
                acc.steps += 1;
                if (t + 1) % self.interval_steps == 0 || t + 1 == steps {
                    flush(acc, st);
                }
            }
        }

        let stored_final: f64 = self
            .state
            .iter()
            .zip(&self.scn.net.links)
            .map(|(s, l)| s.total_density() * l.length)
            .sum();
        Ok(SimOutput {
            dt_hours: self.scn.dt_hours,
            steps,
            interval_steps: self.interval_steps,
            density,
            flow,
            speed,
            final_densities: self.state.iter().map(|s| s.densities.clone()).collect(),
            injected: self.injected,
            discharged: self.discharged,
            stored_initial: self.stored_initial,
            stored_final,
            clamped_negative: self.clamped,
            offramp_stats: stats,
        })
    }

    /// The network being simulated.
    pub fn network(&self) -> &Network {
        &self.scn.net
    }

    /// Split table applied at a node during the last step.
    pub fn applied_splits(&self, node: NodeId) -> &SplitTable {
        &self.applied[node.0]
    }

    /// Head and tail attachment of every link.
    pub fn topology(&self) -> &Topology {
        &self.topo
    }
}

/// Splits pinned by link roles and class kinds alone, before any scenario
/// data: barrier separation on gated corridors, gate passthrough and exit
/// commitments, managed-lane exclusion for general-purpose-only traffic, no
/// direct onramp-to-offramp hops, and committed classes exiting at their
/// offramp. First write wins, and the rules are ordered so physical barriers
/// take precedence over class routing.
pub fn structural_splits(net: &Network, node_id: NodeId) -> SplitTable {
    let node = &net.nodes[node_id.0];
    let m = node.inputs.len();
    let n = node.outputs.len();
    let c = net.class_count();
    let mut t = SplitTable::new(m, n, c);
    let group = |l: LinkId| net.links[l.0].lane_group;
    let pin = |t: &mut SplitTable, i: usize, j: usize, cl: usize, v: f64| {
        if t.get(i, j, cl).is_none() {
            t.set(i, j, cl, v);
        }
    };

    if net.access == AccessMode::Gated {
        if !node.is_gate {
            // Barrier: managed stays managed, nothing else may enter it.
            for (ii, &inp) in node.inputs.iter().enumerate() {
                for (jj, &out) in node.outputs.iter().enumerate() {
                    let managed_in = group(inp) == LaneGroup::Managed;
                    let managed_out = group(out) == LaneGroup::Managed;
                    if managed_in != managed_out {
                        for cl in 0..c {
                            pin(&mut t, ii, jj, cl, 0.0);
                        }
                    }
                }
            }
        } else {
            let gp_out = node.outputs.iter().position(|&l| group(l) == LaneGroup::Gp);
            let ml_out = node.outputs.iter().position(|&l| group(l) == LaneGroup::Managed);
            for (ii, &inp) in node.inputs.iter().enumerate() {
                let gi = group(inp);
                for (cl, class) in net.classes.iter().enumerate() {
                    match class.kind {
                        ClassKind::Destination(_) => {
                            // Committed traffic leaves or stays off the
                            // managed lane at gates.
                            if gi == LaneGroup::Managed || gi == LaneGroup::Gp {
                                for jj in 0..n {
                                    pin(&mut t, ii, jj, cl, if Some(jj) == gp_out { 1.0 } else { 0.0 });
                                }
                            }
                        }
                        ClassKind::Eligible => {
                            // Uncommitted managed traffic rides through.
                            if gi == LaneGroup::Managed {
                                for jj in 0..n {
                                    pin(&mut t, ii, jj, cl, if Some(jj) == ml_out { 1.0 } else { 0.0 });
                                }
                            }
                        }
                        ClassKind::GpOnly => {}
                    }
                }
            }
        }
    }

    // General-purpose-only traffic never takes a managed output.
    for (jj, &out) in node.outputs.iter().enumerate() {
        if group(out) != LaneGroup::Managed {
            continue;
        }
        for (cl, class) in net.classes.iter().enumerate() {
            if class.kind == ClassKind::GpOnly {
                for ii in 0..m {
                    pin(&mut t, ii, jj, cl, 0.0);
                }
            }
        }
    }

    // Onramp traffic merges before it can exit.
    for (ii, &inp) in node.inputs.iter().enumerate() {
        if group(inp) != LaneGroup::Onramp {
            continue;
        }
        for (jj, &out) in node.outputs.iter().enumerate() {
            if group(out) == LaneGroup::Offramp {
                for cl in 0..c {
                    pin(&mut t, ii, jj, cl, 0.0);
                }
            }
        }
    }

    // Committed classes exit at their offramp and nowhere else.
    for (jj, &out) in node.outputs.iter().enumerate() {
        if group(out) != LaneGroup::Offramp {
            continue;
        }
        for (cl, class) in net.classes.iter().enumerate() {
            let ClassKind::Destination(target) = class.kind else { continue };
            for (ii, &inp) in node.inputs.iter().enumerate() {
                if group(inp) != LaneGroup::Gp {
                    continue;
                }
                if target == out {
                    for j2 in 0..n {
                        pin(&mut t, ii, j2, cl, if j2 == jj { 1.0 } else { 0.0 });
                    }
                } else {
                    pin(&mut t, ii, jj, cl, 0.0);
                }
            }
        }
    }

    t
}

fn check_row_sums(
    net: &Network,
    node_id: NodeId,
    t: &SplitTable,
    interval: usize,
    rep: &mut ValidationReport,
) {
    let node = &net.nodes[node_id.0];
    for ii in 0..node.inputs.len() {
        for cl in 0..net.class_count() {
            let mut sum = 0.0;
            let mut defined = 0usize;
            for jj in 0..node.outputs.len() {
                if let Some(v) = t.get(ii, jj, cl) {
                    sum += v;
                    defined += 1;
                }
            }
            let complete = defined == node.outputs.len();
            let bad = if complete {
                (sum - 1.0).abs() > ROW_SUM_TOL
            } else {
                sum > 1.0 + ROW_SUM_TOL
            };
            if bad {
                rep.violations.push(Violation {
                    severity: Severity::Error,
                    code: "split-assembly",
                    message: format!(
                        "node `{}`, interval {interval}: splits for input `{}`, class `{}` sum to {sum}",
                        node.name,
                        net.link_name(node.inputs[ii]),
                        net.classes[cl].name
                    ),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{
        DemandEntry, DemandProfile, FundamentalDiagram, KnownSplit, Link, Node, VehicleClass,
    };
    use alloc::string::ToString;

    fn fd() -> FundamentalDiagram {
        FundamentalDiagram { capacity: 1900.0, free_flow: 60.0, wave: 12.0, jam_density: 180.0 }
    }

    fn link(name: &str, role: LinkRole, group: LaneGroup, length: f64) -> Link {
        Link {
            name: name.to_string(),
            role,
            lane_group: group,
            length,
            lanes: 1,
            fd: fd(),
            friction: 0.0,
            gp_partner: None,
        }
    }

    fn node(name: &str, inputs: &[usize], outputs: &[usize], priorities: &[f64]) -> Node {
        Node {
            name: name.to_string(),
            inputs: inputs.iter().map(|&i| LinkId(i)).collect(),
            outputs: outputs.iter().map(|&i| LinkId(i)).collect(),
            priorities: priorities.to_vec(),
            is_gate: false,
            known_splits: Vec::new(),
            restrictions: Vec::new(),
        }
    }

    /// origin -> mid (1 mi) -> sink, single class.
    fn pipe_scenario(steps: usize, demand_rate: f64) -> Scenario {
        let net = Network {
            access: AccessMode::Full,
            classes: vec![VehicleClass { name: "all".to_string(), kind: ClassKind::GpOnly }],
            links: vec![
                link("src", LinkRole::Origin, LaneGroup::Gp, 0.25),
                link("mid", LinkRole::Ordinary, LaneGroup::Gp, 1.0),
                link("sink", LinkRole::Destination, LaneGroup::Gp, 1.0),
            ],
            nodes: vec![node("a", &[0], &[1], &[1.0]), node("b", &[1], &[2], &[1.0])],
        };
        Scenario {
            net,
            demand: DemandProfile {
                interval_hours: 1.0,
                eligible_fraction: 0.0,
                entries: vec![DemandEntry {
                    origin: LinkId(0),
                    class: ClassId(0),
                    flows: vec![demand_rate],
                }],
            },
            dt_hours: 1.0 / 720.0,
            steps,
            initial_densities: Vec::new(),
            offramp_splits: Vec::new(),
            gate_shares: Vec::new(),
        }
    }

    #[test]
    fn density_update_worked_example() {
        // 300 veh/h net inflow into an empty-outlet cell of 1 mile at a
        // 5 second step moves the density by 300/720.
        let mut scn = pipe_scenario(1, 300.0);
        scn.initial_densities = vec![vec![0.0], vec![30.0], vec![180.0]];
        let mut sim = Simulator::new(scn).unwrap();
        sim.step().unwrap();
        // Sink starts jammed: supply 0, so mid keeps everything it had and
        // receives 300 veh/h from the origin.
        let got = sim.state()[1].total_density();
        assert!((got - (30.0 + 300.0 / 720.0)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn uncongested_pipe_reaches_steady_state() {
        let out = Simulator::new(pipe_scenario(720, 1200.0))
            .unwrap()
            .run(&SimConfig::default())
            .unwrap();
        // After an hour the wave has long passed: density v*rho = 1200.
        let rho = out.final_densities[1][0];
        assert!((rho - 20.0).abs() < 1e-9, "{rho}");
        let last_flow = out.flow[2][719];
        assert!((last_flow - 1200.0).abs() < 1e-6, "{last_flow}");
        assert!(out.conservation_defect().abs() <= 1e-9 * out.injected.max(1.0));
    }

    #[test]
    fn overload_grows_the_origin_queue() {
        let out = Simulator::new(pipe_scenario(720, 2500.0))
            .unwrap()
            .run(&SimConfig::default())
            .unwrap();
        // 2500 in, 1900 through: the rest waits in the queue.
        let queued = out.final_densities[0][0] * 0.25;
        assert!(queued > 500.0, "queue holds {queued}");
        assert!(out.conservation_defect().abs() <= 1e-9 * out.injected.max(1.0));
    }

    #[test]
    fn scenario_validation_rejects_misaligned_interval() {
        let mut scn = pipe_scenario(10, 100.0);
        scn.demand.interval_hours = scn.dt_hours * 2.5;
        assert!(validate_scenario(&scn)
            .violations
            .iter()
            .any(|v| v.code == "demand-interval"));
    }

    #[test]
    fn offramp_split_diverts_the_requested_fraction() {
        // src -> a -> mid -> b -> {off, on-through}, beta = 0.25.
        let net = Network {
            access: AccessMode::Full,
            classes: vec![VehicleClass { name: "all".to_string(), kind: ClassKind::GpOnly }],
            links: vec![
                link("src", LinkRole::Origin, LaneGroup::Gp, 0.25),
                link("mid", LinkRole::Ordinary, LaneGroup::Gp, 1.0),
                link("off", LinkRole::Destination, LaneGroup::Offramp, 0.3),
                link("through", LinkRole::Destination, LaneGroup::Gp, 1.0),
            ],
            nodes: vec![
                node("a", &[0], &[1], &[1.0]),
                node("b", &[1], &[2, 3], &[1.0]),
            ],
        };
        let scn = Scenario {
            net,
            demand: DemandProfile {
                interval_hours: 1.0,
                eligible_fraction: 0.0,
                entries: vec![DemandEntry {
                    origin: LinkId(0),
                    class: ClassId(0),
                    flows: vec![1000.0],
                }],
            },
            dt_hours: 1.0 / 720.0,
            steps: 720,
            initial_densities: Vec::new(),
            offramp_splits: vec![OfframpSplitSeries { offramp: LinkId(2), betas: vec![0.25] }],
            gate_shares: Vec::new(),
        };
        let out = Simulator::new(scn).unwrap().run(&SimConfig::default()).unwrap();
        let off_flow = out.flow[2][719];
        let through_flow = out.flow[3][719];
        assert!((off_flow - 250.0).abs() < 1e-6, "{off_flow}");
        assert!((through_flow - 750.0).abs() < 1e-6, "{through_flow}");
        // Interval statistics carry the applied splits and realized flows.
        assert_eq!(out.offramp_stats.len(), 1);
        let stats = &out.offramp_stats[0];
        assert_eq!(stats.node, NodeId(1));
        // The interval mean includes the startup ramp, so it sits a little
        // under the steady 250 veh/h.
        let last = stats.intervals.last().unwrap();
        assert!(last.mean_offramp_flow[0] > 235.0 && last.mean_offramp_flow[0] < 250.5);
    }

    fn gated_scenario() -> Scenario {
        // gp/ml origins -> gate -> gp1 + ml1; gp1 -> n1 {off, gp2}; ml1 and
        // gp2 terminate.  One committed class for the offramp.
        let mut ml1 = link("ml1", LinkRole::Destination, LaneGroup::Managed, 1.0);
        ml1.friction = 0.0;
        let net = Network {
            access: AccessMode::Gated,
            classes: vec![
                VehicleClass { name: "sov".to_string(), kind: ClassKind::GpOnly },
                VehicleClass { name: "hov".to_string(), kind: ClassKind::Eligible },
                VehicleClass { name: "to-off".to_string(), kind: ClassKind::Destination(LinkId(4)) },
            ],
            links: vec![
                link("gp0", LinkRole::Origin, LaneGroup::Gp, 0.25),
                link("ml0", LinkRole::Origin, LaneGroup::Managed, 0.25),
                link("gp1", LinkRole::Ordinary, LaneGroup::Gp, 1.0),
                ml1,
                link("off", LinkRole::Destination, LaneGroup::Offramp, 0.3),
                link("gp2", LinkRole::Destination, LaneGroup::Gp, 1.0),
            ],
            nodes: vec![
                Node {
                    is_gate: true,
                    known_splits: vec![
                        // Eligible traffic on GP stays on GP at this gate.
                        KnownSplit { input: LinkId(0), output: LinkId(2), class: ClassId(1), value: 1.0 },
                        KnownSplit { input: LinkId(0), output: LinkId(3), class: ClassId(1), value: 0.0 },
                    ],
                    ..node("gate", &[0, 1], &[2, 3], &[0.7, 0.3])
                },
                node("n1", &[2], &[4, 5], &[1.0]),
            ],
        };
        Scenario {
            net,
            demand: DemandProfile {
                interval_hours: 0.1,
                eligible_fraction: 0.0,
                entries: vec![
                    DemandEntry { origin: LinkId(0), class: ClassId(0), flows: vec![1000.0; 5] },
                    DemandEntry { origin: LinkId(1), class: ClassId(1), flows: vec![400.0; 5] },
                ],
            },
            dt_hours: 1.0 / 720.0,
            steps: 360,
            initial_densities: Vec::new(),
            offramp_splits: vec![OfframpSplitSeries { offramp: LinkId(4), betas: vec![0.2] }],
            gate_shares: Vec::new(),
        }
    }

    #[test]
    fn gate_relabel_commits_derived_shares() {
        let scn = gated_scenario();
        let mut sim = Simulator::new(scn).unwrap();
        // Seed the managed origin queue and relabel once.
        sim.state[1].densities[1] = 10.0;
        sim.step().unwrap();
        // Derived share for the only offramp is its split ratio, 0.2; the
        // relabeled pool was drained through the gate during the same step,
        // so check conservation over queue plus outflow instead.
        let q = &sim.state[1].densities;
        assert!(q[2] >= 0.0);
        let out = sim.last_outflow()[1].clone();
        let total_left = (q[1] + q[2]) * 0.25 + (out[1] + out[2]) * sim.scn.dt_hours;
        let expected = 10.0 * 0.25 + 400.0 * sim.scn.dt_hours;
        assert!((total_left - expected).abs() < 1e-9, "{total_left} vs {expected}");
        // The committed portion is 20% of the pooled queue; the step's
        // arrivals enter after the relabel and stay eligible.
        let committed = q[2] * 0.25 + out[2] * sim.scn.dt_hours;
        assert!((committed - 10.0 * 0.25 * 0.2).abs() < 1e-9, "{committed}");
    }

    #[test]
    fn explicit_shares_relabel_exactly() {
        let mut scn = gated_scenario();
        scn.gate_shares = vec![GateShares { gate: NodeId(0), shares: vec![0.2] }];
        scn.demand.entries.clear();
        scn.steps = 1;
        // Two committed-share, one second scenario: pool of 10 on the
        // managed origin splits 2 committed, 8 eligible.
        let mut sim = Simulator::new(scn).unwrap();
        sim.state[1].densities[1] = 6.0;
        sim.state[1].densities[2] = 4.0;
        let interval = 0;
        let shares = sim.shares[interval][0].clone();
        assert_eq!(shares, vec![0.2]);
        sim.step().unwrap();
        // After pooling (6 + 4 = 10): committed 2, eligible 8, minus what
        // flowed out this step.
        let drained: f64 = sim.last_outflow()[1].iter().sum::<f64>() * sim.scn.dt_hours / 0.25;
        let q = &sim.state[1].densities;
        assert!((q[1] + q[2] + drained - 10.0).abs() < 1e-9);
        // Flow and remaining density keep the 2:8 ratio per class.
        let out = sim.last_outflow()[1].clone();
        let committed = q[2] + out[2] * sim.scn.dt_hours / 0.25;
        assert!((committed - 2.0).abs() < 1e-9, "{committed}");
    }

    #[test]
    fn gated_corridor_conserves_and_fills_the_offramp() {
        let out = Simulator::new(gated_scenario()).unwrap().run(&SimConfig::default()).unwrap();
        assert!(out.conservation_defect().abs() <= 1e-9 * out.injected.max(1.0));
        // The offramp receives the committed class plus 20% of GP traffic.
        let last = out.flow[4][359];
        assert!(last > 100.0, "offramp flow {last}");
        // Managed lane carries only eligible traffic.
        assert_eq!(out.final_densities[3][0], 0.0);
    }

    #[test]
    fn zero_friction_matches_absent_partner_bitwise() {
        let mut with_partner = gated_scenario();
        with_partner.net.links[3].friction = 0.0;
        with_partner.net.links[3].gp_partner = Some(LinkId(2));
        let a = Simulator::new(with_partner).unwrap().run(&SimConfig::default()).unwrap();
        let b = Simulator::new(gated_scenario()).unwrap().run(&SimConfig::default()).unwrap();
        for (ra, rb) in a.density.iter().zip(&b.density) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (ra, rb) in a.flow.iter().zip(&b.flow) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn friction_slows_the_managed_lane_when_gp_jams() {
        let mut scn = gated_scenario();
        scn.net.links[3].friction = 0.4;
        scn.net.links[3].gp_partner = Some(LinkId(2));
        // Jam GP downstream of the gate by choking its exit.
        scn.net.links[5].fd = FundamentalDiagram {
            capacity: 450.0,
            free_flow: 10.0,
            wave: 5.0,
            jam_density: 120.0,
        };
        let keep = scn.clone();
        let slowed = Simulator::new(scn).unwrap().run(&SimConfig::default()).unwrap();
        let mut free = keep;
        free.net.links[3].friction = 0.0;
        free.net.links[3].gp_partner = None;
        let free = Simulator::new(free).unwrap().run(&SimConfig::default()).unwrap();
        let v_slow = slowed.speed[3][359];
        let v_free = free.speed[3][359];
        assert!(v_slow < v_free - 1.0, "managed speed {v_slow} vs {v_free}");
    }

    #[test]
    fn structural_table_routes_committed_class_to_its_offramp() {
        let scn = gated_scenario();
        let t = structural_splits(&scn.net, NodeId(1));
        // GP input at the offramp node: committed class exits fully.
        assert_eq!(t.get(0, 0, 2), Some(1.0));
        assert_eq!(t.get(0, 1, 2), Some(0.0));
        // Uncommitted classes are left for the split series.
        assert_eq!(t.get(0, 0, 0), None);
    }

    #[test]
    fn determinism_bitwise_across_runs() {
        let a = Simulator::new(gated_scenario()).unwrap().run(&SimConfig::default()).unwrap();
        let b = Simulator::new(gated_scenario()).unwrap().run(&SimConfig::default()).unwrap();
        for (ra, rb) in a.density.iter().zip(&b.density) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(a.injected.to_bits(), b.injected.to_bits());
        assert_eq!(a.discharged.to_bits(), b.discharged.to_bits());
    }
}
