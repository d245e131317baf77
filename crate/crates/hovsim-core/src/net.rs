//! Network description and static validation.
//!
//! A network is a set of directed links joined by nodes. Links carry the cell
//! state; nodes carry split ratios, input priorities, and FIFO relaxation
//! coefficients. Vehicle classes distinguish general-purpose-only traffic
//! (no managed-lane access), managed-eligible traffic, and, on gated
//! corridors, destination-based classes that pre-commit to exiting at one
//! specific offramp.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Index of a vehicle class in [`Network::classes`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ClassId(pub usize);

/// Index of a link in [`Network::links`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LinkId(pub usize);

/// Index of a node in [`Network::nodes`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub usize);

/// What a vehicle class is allowed to do.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ClassKind {
    /// May not use managed-lane links (typically single-occupancy traffic).
    GpOnly,
    /// May use both lane groups (typically HOV or tolled traffic).
    Eligible,
    /// Committed to exit at one specific offramp. Only meaningful on gated
    /// corridors, where gate switching creates and dissolves these classes.
    Destination(LinkId),
}

#[derive(Clone, Debug)]
pub struct VehicleClass {
    pub name: String,
    pub kind: ClassKind,
}

/// Position of a link in the network graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LinkRole {
    /// Interior link with an upstream and a downstream node.
    Ordinary,
    /// Entry buffer modeled as a vertical queue: no upstream node, unbounded
    /// storage, and its whole content offered as demand each step.
    Origin,
    /// Exit link with no downstream node; drains at its own sending rate.
    Destination,
}

/// Lane group a link belongs to. Performance metrics aggregate over the
/// mainline groups; ramps and auxiliary lanes are reported but not totaled.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LaneGroup {
    Gp,
    Managed,
    Onramp,
    Offramp,
    Auxiliary,
}

impl LaneGroup {
    pub fn label(self) -> &'static str {
        match self {
            LaneGroup::Gp => "gp",
            LaneGroup::Managed => "managed",
            LaneGroup::Onramp => "onramp",
            LaneGroup::Offramp => "offramp",
            LaneGroup::Auxiliary => "auxiliary",
        }
    }
}

/// Backwards-lambda fundamental diagram, lane-group totals.
///
/// Free-flow sending grows at `free_flow` up to `capacity`; congested
/// receiving decreases at `wave` toward zero at `jam_density`. The low
/// critical density is where the congested branch would reach capacity from
/// above, the high critical density is where free flow reaches capacity; the
/// gap between the two is the metastable band (see [`crate::link`]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalDiagram {
    /// Capacity F, veh/h.
    pub capacity: f64,
    /// Free-flow speed v_f, mph.
    pub free_flow: f64,
    /// Congestion wave speed w, mph (positive).
    pub wave: f64,
    /// Jam density, veh/mi.
    pub jam_density: f64,
}

impl FundamentalDiagram {
    /// Density below which the link is unconditionally uncongested.
    pub fn low_critical_density(&self) -> f64 {
        self.wave * self.jam_density / (self.free_flow + self.wave)
    }

    /// Density above which the link is unconditionally congested.
    pub fn high_critical_density(&self) -> f64 {
        self.capacity / self.free_flow
    }
}

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub role: LinkRole,
    pub lane_group: LaneGroup,
    /// Length, miles.
    pub length: f64,
    pub lanes: u32,
    pub fd: FundamentalDiagram,
    /// Friction coefficient σ in [0, 1]; managed links only, 0 disables.
    pub friction: f64,
    /// Parallel general-purpose link whose speed drives the friction effect.
    pub gp_partner: Option<LinkId>,
}

/// One a-priori known split-ratio entry at a node.
#[derive(Clone, Copy, Debug)]
pub struct KnownSplit {
    pub input: LinkId,
    pub output: LinkId,
    pub class: ClassId,
    pub value: f64,
}

/// FIFO relaxation coefficient η for one (input, restricting output,
/// restricted output) triple. 1 is full FIFO coupling: congestion on the
/// restricting output holds back this input's flow toward the restricted
/// output in proportion. 0 decouples the two movements. Triples without an
/// entry default to 1.
#[derive(Clone, Copy, Debug)]
pub struct Restriction {
    pub input: LinkId,
    pub restricting: LinkId,
    pub restricted: LinkId,
    pub coefficient: f64,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    /// Links entering the node.
    pub inputs: Vec<LinkId>,
    /// Links leaving the node.
    pub outputs: Vec<LinkId>,
    /// Input merge priorities, one per input, nonnegative, summing to 1.
    pub priorities: Vec<f64>,
    /// Managed-lane access gate (gated corridors only).
    pub is_gate: bool,
    pub known_splits: Vec<KnownSplit>,
    pub restrictions: Vec<Restriction>,
}

impl Node {
    /// η for a triple, falling back to full coupling when unlisted.
    pub fn coupling(&self, input: LinkId, restricting: LinkId, restricted: LinkId) -> f64 {
        self.restrictions
            .iter()
            .find(|r| r.input == input && r.restricting == restricting && r.restricted == restricted)
            .map(|r| r.coefficient)
            .unwrap_or(1.0)
    }
}

/// How traffic may move between the managed and general-purpose lanes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AccessMode {
    /// Eligible traffic may cross between lane groups at every node.
    Full,
    /// Crossing is only possible at gate nodes; between gates the managed
    /// lane is separated and exits are pre-committed via destination classes.
    Gated,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub access: AccessMode,
    pub classes: Vec<VehicleClass>,
    pub links: Vec<Link>,
    pub nodes: Vec<Node>,
}

/// Piecewise-constant demand for one origin link and class, veh/h per
/// interval.
#[derive(Clone, Debug)]
pub struct DemandEntry {
    pub origin: LinkId,
    pub class: ClassId,
    pub flows: Vec<f64>,
}

/// Demand program for the whole network.
#[derive(Clone, Debug)]
pub struct DemandProfile {
    /// Length of one demand interval, hours. Must be an integer multiple of
    /// the simulation step.
    pub interval_hours: f64,
    /// Portion of total entering demand that is managed-eligible; used by
    /// loaders that split aggregate counts into classes.
    pub eligible_fraction: f64,
    pub entries: Vec<DemandEntry>,
}

impl Default for DemandProfile {
    fn default() -> Self {
        DemandProfile { interval_hours: 5.0 / 60.0, eligible_fraction: 0.15, entries: Vec::new() }
    }
}

/// Where each link attaches. `tail` is the node the link leaves, `head` the
/// node it enters; origins have no tail, destinations no head.
#[derive(Clone, Debug)]
pub struct Topology {
    pub tail: Vec<Option<NodeId>>,
    pub head: Vec<Option<NodeId>>,
}

impl Network {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn eligible_class(&self) -> Option<ClassId> {
        self.classes
            .iter()
            .position(|c| c.kind == ClassKind::Eligible)
            .map(ClassId)
    }

    pub fn destination_class_for(&self, offramp: LinkId) -> Option<ClassId> {
        self.classes
            .iter()
            .position(|c| c.kind == ClassKind::Destination(offramp))
            .map(ClassId)
    }

    /// Link attachment derived from the node lists. When a link is claimed by
    /// several nodes the first claim wins; [`validate_network`] reports the
    /// conflict.
    pub fn topology(&self) -> Topology {
        let mut tail = vec![None; self.links.len()];
        let mut head = vec![None; self.links.len()];
        for (n, node) in self.nodes.iter().enumerate() {
            for &l in &node.outputs {
                if l.0 < tail.len() && tail[l.0].is_none() {
                    tail[l.0] = Some(NodeId(n));
                }
            }
            for &l in &node.inputs {
                if l.0 < head.len() && head[l.0].is_none() {
                    head[l.0] = Some(NodeId(n));
                }
            }
        }
        Topology { tail, head }
    }

    pub fn link_name(&self, l: LinkId) -> &str {
        &self.links[l.0].name
    }

    pub fn node_name(&self, n: NodeId) -> &str {
        &self.nodes[n.0].name
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding. `code` is a stable machine-readable tag, the
/// message carries the specifics.
#[derive(Clone, Debug)]
pub struct Violation {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]: {}", self.code, self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.violations.iter().any(|v| v.severity == Severity::Error)
    }

    fn error(&mut self, code: &'static str, message: String) {
        self.violations.push(Violation { severity: Severity::Error, code, message });
    }

    fn warning(&mut self, code: &'static str, message: String) {
        self.violations.push(Violation { severity: Severity::Warning, code, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Walk failure while deriving gate segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TopologyError {
    /// A managed link on a gated corridor never reaches a gate or the
    /// corridor end.
    UnterminatedGateSegment { link: LinkId },
    /// A node on the walked mainline has more than one continuation in the
    /// same lane group.
    AmbiguousMainline { node: NodeId },
    /// The mainline walk revisited a node.
    CyclicMainline { node: NodeId },
    /// Gate nodes may not have offramp outputs; the segment an offramp
    /// belongs to would be ambiguous.
    OfframpAtGate { node: NodeId },
    /// A gate node is missing the managed or general-purpose attachments
    /// switching needs.
    MalformedGate { node: NodeId },
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::UnterminatedGateSegment { link } => {
                write!(f, "managed link #{} never reaches a gate or the corridor end", link.0)
            }
            TopologyError::AmbiguousMainline { node } => {
                write!(f, "node #{} has more than one mainline continuation", node.0)
            }
            TopologyError::CyclicMainline { node } => {
                write!(f, "mainline walk revisits node #{}", node.0)
            }
            TopologyError::OfframpAtGate { node } => {
                write!(f, "gate node #{} has an offramp output", node.0)
            }
            TopologyError::MalformedGate { node } => {
                write!(f, "gate node #{} lacks managed or GP attachments", node.0)
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TopologyError {}

/// Offramps a gate's switched traffic can reach before the next gate,
/// in driving order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateSegment {
    pub gate: NodeId,
    pub offramps: Vec<LinkId>,
}

const PRIORITY_SUM_TOL: f64 = 1e-9;
const SPLIT_SUM_TOL: f64 = 1e-12;

/// Check every static invariant of the network. The returned report is empty
/// exactly when the network is well formed; warnings flag configurations that
/// are legal but outside recommended ranges.
pub fn validate_network(net: &Network) -> ValidationReport {
    let mut rep = ValidationReport::default();
    check_classes(net, &mut rep);
    check_links(net, &mut rep);
    check_nodes(net, &mut rep);
    check_attachment(net, &mut rep);
    if net.access == AccessMode::Gated {
        match gate_segments(net) {
            Ok(segments) => check_destination_coverage(net, &segments, &mut rep),
            Err(e) => rep.error("gate-topology", alloc::format!("{e}")),
        }
    }
    rep
}

fn check_classes(net: &Network, rep: &mut ValidationReport) {
    if net.classes.is_empty() {
        rep.error("no-classes", String::from("network defines no vehicle classes"));
    }
    let eligible = net.classes.iter().filter(|c| c.kind == ClassKind::Eligible).count();
    if eligible > 1 {
        rep.error("multiple-eligible-classes", alloc::format!("{eligible} managed-eligible classes; at most one is allowed"));
    }
    if net.access == AccessMode::Gated && eligible == 0 && !net.nodes.is_empty() {
        rep.error("missing-eligible-class", String::from("gated corridors need a managed-eligible class for gate switching"));
    }
    for (i, c) in net.classes.iter().enumerate() {
        if let ClassKind::Destination(off) = c.kind {
            match net.links.get(off.0) {
                None => rep.error("bad-destination-ref", alloc::format!("class `{}` references missing link #{}", c.name, off.0)),
                Some(l) if l.lane_group != LaneGroup::Offramp => {
                    rep.error("bad-destination-ref", alloc::format!("class `{}` references `{}`, which is not an offramp", c.name, l.name))
                }
                Some(_) => {}
            }
            if net.access == AccessMode::Full {
                rep.error("destination-class-on-full-access", alloc::format!("class `{}` is destination-based but the corridor has full managed-lane access", c.name));
            }
            for other in &net.classes[i + 1..] {
                if other.kind == c.kind {
                    rep.error("duplicate-destination-class", alloc::format!("classes `{}` and `{}` target the same offramp", c.name, other.name));
                }
            }
        }
        for other in &net.classes[i + 1..] {
            if other.name == c.name {
                rep.error("duplicate-class-name", alloc::format!("class name `{}` appears twice", c.name));
            }
        }
    }
}

fn check_links(net: &Network, rep: &mut ValidationReport) {
    for (i, l) in net.links.iter().enumerate() {
        let who = |field: &str| alloc::format!("link `{}`: {field}", l.name);
        if !(l.length > 0.0) {
            rep.error("nonpositive-length", who("length must be positive"));
        }
        if l.lanes == 0 {
            rep.error("zero-lanes", who("lane count must be at least 1"));
        }
        let fd = &l.fd;
        if !(fd.capacity > 0.0 && fd.free_flow > 0.0 && fd.wave > 0.0 && fd.jam_density > 0.0) {
            rep.error("nonpositive-fd", who("fundamental diagram parameters must be positive"));
        } else {
            if fd.low_critical_density() > fd.high_critical_density() * (1.0 + 1e-12) {
                rep.error("degenerate-fd", who("congested branch reaches capacity above the free-flow critical density; capacity is too low for the wave speed"));
            }
            if fd.high_critical_density() >= fd.jam_density {
                rep.error("degenerate-fd", who("free-flow critical density reaches jam density"));
            }
        }
        if !(0.0..=1.0).contains(&l.friction) {
            rep.error("friction-out-of-range", who("friction coefficient must lie in [0, 1]"));
        } else if l.friction > 0.4 {
            rep.warning("high-friction", who("friction coefficient above 0.4; calibrated values stay at or below 0.4"));
        }
        if l.lane_group != LaneGroup::Managed {
            if l.friction != 0.0 {
                rep.error("friction-on-unmanaged", who("only managed links take a friction coefficient"));
            }
            if l.gp_partner.is_some() {
                rep.error("partner-on-unmanaged", who("only managed links take a GP partner"));
            }
        }
        if l.lane_group == LaneGroup::Managed && l.friction > 0.0 && l.gp_partner.is_none() {
            rep.error("missing-gp-partner", who("friction needs a GP partner link"));
        }
        if let Some(p) = l.gp_partner {
            match net.links.get(p.0) {
                None => rep.error("bad-partner-ref", who("GP partner does not exist")),
                Some(partner) => {
                    if partner.lane_group != LaneGroup::Gp {
                        rep.error("bad-partner-ref", who("GP partner is not a general-purpose link"));
                    }
                    if p.0 == i {
                        rep.error("bad-partner-ref", who("link cannot be its own GP partner"));
                    }
                }
            }
        }
    }
    // A partner sharing neither endpoint is probably a typo, but a coarse
    // managed-lane cell can legitimately run alongside several GP cells, so
    // this only warns.
    let topo = net.topology();
    for (me, l) in net.links.iter().enumerate() {
        if let Some(p) = l.gp_partner {
            if p.0 < net.links.len()
                && topo.tail[me] != topo.tail[p.0]
                && topo.head[me] != topo.head[p.0]
            {
                rep.warning(
                    "partner-not-parallel",
                    alloc::format!(
                        "link `{}` and its GP partner `{}` share no endpoint",
                        l.name,
                        net.links[p.0].name
                    ),
                );
            }
        }
    }
}

fn check_nodes(net: &Network, rep: &mut ValidationReport) {
    for node in &net.nodes {
        let who = |msg: &str| alloc::format!("node `{}`: {msg}", node.name);
        if node.inputs.is_empty() {
            rep.error("node-without-input", who("no incoming link"));
        }
        if node.outputs.is_empty() {
            rep.error("node-without-output", who("no outgoing link"));
        }
        for &l in node.inputs.iter().chain(&node.outputs) {
            if l.0 >= net.links.len() {
                rep.error("bad-link-ref", who(&alloc::format!("references missing link #{}", l.0)));
            }
        }
        for (a, &l) in node.inputs.iter().enumerate() {
            if node.inputs[a + 1..].contains(&l) {
                rep.error("repeated-link", who("an input link is listed twice"));
            }
        }
        for (a, &l) in node.outputs.iter().enumerate() {
            if node.outputs[a + 1..].contains(&l) {
                rep.error("repeated-link", who("an output link is listed twice"));
            }
            if node.inputs.contains(&l) {
                rep.error("repeated-link", who("a link is both input and output"));
            }
        }
        if node.priorities.len() != node.inputs.len() {
            rep.error("priority-shape", who("one priority per input is required"));
        } else {
            if node.priorities.iter().any(|&p| !(p >= 0.0)) {
                rep.error("negative-priority", who("priorities must be nonnegative"));
            }
            let sum: f64 = node.priorities.iter().sum();
            if (sum - 1.0).abs() > PRIORITY_SUM_TOL {
                rep.error("priority-sum", who("priorities must sum to 1"));
            }
        }
        for r in &node.restrictions {
            if !(0.0..=1.0).contains(&r.coefficient) {
                rep.error("coupling-out-of-range", who("FIFO relaxation coefficients must lie in [0, 1]"));
            }
            if !node.inputs.contains(&r.input) || !node.outputs.contains(&r.restricting) || !node.outputs.contains(&r.restricted) {
                rep.error("bad-coupling-ref", who("a restriction references links not attached to this node"));
            }
        }
        check_known_splits(net, node, &mut *rep);
        if node.is_gate && net.access == AccessMode::Full {
            rep.error("gate-on-full-access", who("gate nodes only exist on gated corridors"));
        }
    }
}

fn check_known_splits(net: &Network, node: &Node, rep: &mut ValidationReport) {
    let who = |msg: String| alloc::format!("node `{}`: {msg}", node.name);
    for (a, s) in node.known_splits.iter().enumerate() {
        if !node.inputs.contains(&s.input) || !node.outputs.contains(&s.output) {
            rep.error("bad-split-ref", who(String::from("a known split references links not attached to this node")));
        }
        if s.class.0 >= net.classes.len() {
            rep.error("bad-split-ref", who(String::from("a known split references a missing class")));
        }
        if !(0.0..=1.0).contains(&s.value) {
            rep.error("split-out-of-range", who(String::from("split ratios must lie in [0, 1]")));
        }
        for other in &node.known_splits[a + 1..] {
            if other.input == s.input && other.output == s.output && other.class == s.class {
                rep.error("duplicate-split", who(String::from("the same movement has two known splits")));
            }
        }
    }
    // Fully defined rows must sum to 1; partially defined rows must leave
    // nonnegative room for the solver.
    for &input in &node.inputs {
        for c in 0..net.classes.len() {
            let defined: Vec<&KnownSplit> = node
                .known_splits
                .iter()
                .filter(|s| s.input == input && s.class == ClassId(c))
                .collect();
            if defined.is_empty() {
                continue;
            }
            let sum: f64 = defined.iter().map(|s| s.value).sum();
            if defined.len() == node.outputs.len() {
                if (sum - 1.0).abs() > SPLIT_SUM_TOL {
                    rep.error(
                        "split-sum",
                        who(alloc::format!(
                            "splits for input `{}`, class `{}` sum to {sum}, expected 1",
                            net.link_name(input),
                            net.classes[c].name
                        )),
                    );
                }
            } else if sum > 1.0 + SPLIT_SUM_TOL {
                rep.error(
                    "split-sum",
                    who(alloc::format!(
                        "partial splits for input `{}`, class `{}` exceed 1",
                        net.link_name(input),
                        net.classes[c].name
                    )),
                );
            }
        }
    }
}

fn check_attachment(net: &Network, rep: &mut ValidationReport) {
    let mut tails = vec![0usize; net.links.len()];
    let mut heads = vec![0usize; net.links.len()];
    for node in &net.nodes {
        for &l in &node.outputs {
            if l.0 < tails.len() {
                tails[l.0] += 1;
            }
        }
        for &l in &node.inputs {
            if l.0 < heads.len() {
                heads[l.0] += 1;
            }
        }
    }
    for (i, l) in net.links.iter().enumerate() {
        let who = alloc::format!("link `{}`", l.name);
        if tails[i] > 1 {
            rep.error("multiple-attachment", alloc::format!("{who} leaves more than one node"));
        }
        if heads[i] > 1 {
            rep.error("multiple-attachment", alloc::format!("{who} enters more than one node"));
        }
        let (want_tail, want_head) = match l.role {
            LinkRole::Origin => (0, 1),
            LinkRole::Destination => (1, 0),
            LinkRole::Ordinary => (1, 1),
        };
        if tails[i].min(1) != want_tail || heads[i].min(1) != want_head {
            rep.error(
                "role-attachment",
                alloc::format!(
                    "{who} is {:?} but leaves {} node(s) and enters {} node(s)",
                    l.role,
                    tails[i],
                    heads[i]
                ),
            );
        }
    }
}

fn check_destination_coverage(net: &Network, segments: &[GateSegment], rep: &mut ValidationReport) {
    for seg in segments {
        for &off in &seg.offramps {
            if net.destination_class_for(off).is_none() {
                rep.error(
                    "missing-destination-class",
                    alloc::format!(
                        "offramp `{}` is reachable from gate `{}` but no destination class targets it",
                        net.link_name(off),
                        net.node_name(seg.gate)
                    ),
                );
            }
        }
    }
}

/// Check the explicit step-size stability condition: over one step neither
/// free flow nor the congestion wave may cross a whole link, so `v_f·dt <= L`
/// and `w·dt <= L` per link. Origins are exempt (vertical queues have no wave
/// propagation).
pub fn check_cfl(net: &Network, dt_hours: f64) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if !(dt_hours > 0.0) {
        rep.error("nonpositive-step", String::from("time step must be positive"));
        return rep;
    }
    for l in &net.links {
        if l.role == LinkRole::Origin {
            continue;
        }
        let bound = l.length * (1.0 + 1e-12);
        if l.fd.free_flow * dt_hours > bound {
            rep.error(
                "cfl",
                alloc::format!(
                    "link `{}`: free flow covers {:.4} mi per step but the link is {:.4} mi",
                    l.name,
                    l.fd.free_flow * dt_hours,
                    l.length
                ),
            );
        }
        if l.fd.wave * dt_hours > bound {
            rep.error(
                "cfl",
                alloc::format!(
                    "link `{}`: congestion wave covers {:.4} mi per step but the link is {:.4} mi",
                    l.name,
                    l.fd.wave * dt_hours,
                    l.length
                ),
            );
        }
    }
    rep
}

/// Derive, for every gate, the ordered offramps its switched traffic can
/// reach before the next gate, by walking the general-purpose mainline
/// downstream. Also verifies that every managed link reaches a gate or the
/// corridor end. Returns an empty list on full-access networks.
pub fn gate_segments(net: &Network) -> Result<Vec<GateSegment>, TopologyError> {
    if net.access == AccessMode::Full {
        return Ok(Vec::new());
    }
    let topo = net.topology();
    check_managed_chains(net, &topo)?;
    let mut segments = Vec::new();
    for (n, node) in net.nodes.iter().enumerate() {
        if !node.is_gate {
            continue;
        }
        let gate = NodeId(n);
        if node.outputs.iter().any(|&l| net.links[l.0].lane_group == LaneGroup::Offramp) {
            return Err(TopologyError::OfframpAtGate { node: gate });
        }
        let has = |links: &[LinkId], g: LaneGroup| links.iter().any(|&l| net.links[l.0].lane_group == g);
        if !has(&node.inputs, LaneGroup::Managed)
            || !has(&node.outputs, LaneGroup::Managed)
            || !has(&node.outputs, LaneGroup::Gp)
        {
            return Err(TopologyError::MalformedGate { node: gate });
        }
        let mut offramps = Vec::new();
        let mut at = gate;
        let mut visited = vec![false; net.nodes.len()];
        loop {
            if visited[at.0] {
                return Err(TopologyError::CyclicMainline { node: at });
            }
            visited[at.0] = true;
            let mut continuation = None;
            for &l in &net.nodes[at.0].outputs {
                if net.links[l.0].lane_group == LaneGroup::Gp {
                    if continuation.is_some() {
                        return Err(TopologyError::AmbiguousMainline { node: at });
                    }
                    continuation = Some(l);
                }
            }
            let Some(link) = continuation else { break };
            let Some(next) = topo.head[link.0] else { break };
            if net.nodes[next.0].is_gate {
                break;
            }
            for &l in &net.nodes[next.0].outputs {
                if net.links[l.0].lane_group == LaneGroup::Offramp {
                    offramps.push(l);
                }
            }
            at = next;
        }
        segments.push(GateSegment { gate, offramps });
    }
    Ok(segments)
}

fn check_managed_chains(net: &Network, topo: &Topology) -> Result<(), TopologyError> {
    for (i, l) in net.links.iter().enumerate() {
        if l.lane_group != LaneGroup::Managed {
            continue;
        }
        let mut at = LinkId(i);
        let mut hops = 0usize;
        loop {
            let Some(head) = topo.head[at.0] else { break };
            let node = &net.nodes[head.0];
            if node.is_gate {
                break;
            }
            let mut next = None;
            for &out in &node.outputs {
                if net.links[out.0].lane_group == LaneGroup::Managed {
                    if next.is_some() {
                        return Err(TopologyError::AmbiguousMainline { node: head });
                    }
                    next = Some(out);
                }
            }
            match next {
                Some(out) => at = out,
                None => return Err(TopologyError::UnterminatedGateSegment { link: LinkId(i) }),
            }
            hops += 1;
            if hops > net.links.len() {
                return Err(TopologyError::CyclicMainline { node: head });
            }
        }
    }
    Ok(())
}

/// Destination classes a gated network must define: one per offramp that
/// appears in any gate segment.
pub fn required_destination_offramps(segments: &[GateSegment]) -> Vec<LinkId> {
    let mut all: Vec<LinkId> = segments.iter().flat_map(|s| s.offramps.iter().copied()).collect();
    all.sort();
    all.dedup();
    all
}
