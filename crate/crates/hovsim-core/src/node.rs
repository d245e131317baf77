//! Node flow allocation and split-ratio completion.
//!
//! A node joins M input links to N output links. Each step the inputs offer
//! per-class demands, the outputs offer supplies, and split ratios say where
//! each input's traffic wants to go. [`compute_node_flows`] resolves the
//! competition: outputs are processed from most to least constrained, each
//! one dividing its remaining supply among the inputs competing there in
//! proportion to demand-weighted priorities, with per-input demand caps and
//! redistribution. First-in-first-out coupling between an input's movements
//! is adjustable per triple: a fully coupled input that is throttled toward
//! one output is throttled toward all of them in the same ratio, a decoupled
//! one keeps sending elsewhere at full rate.
//!
//! [`solve_undefined_split_ratios`] fills in whatever split ratios a scenario
//! leaves unspecified. Known ratios and already-assigned mass are held fixed
//! while the remainder is assigned so that, as far as the remaining freedom
//! allows, every undetermined movement loads its output to the same fraction
//! of the share that output offers the movement's input. The distribution of
//! whatever mass remains once the ratios are level is supply-proportional and
//! can be reshaped through [`TerminalSplitBias`].

use alloc::vec;
use alloc::vec::Vec;

/// Split-ratio table for one node: one entry per (input, output, class),
/// `None` where the scenario leaves the ratio to the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitTable {
    inputs: usize,
    outputs: usize,
    classes: usize,
    values: Vec<Option<f64>>,
}

impl SplitTable {
    /// A table with every entry undefined.
    pub fn new(inputs: usize, outputs: usize, classes: usize) -> Self {
        SplitTable { inputs, outputs, classes, values: vec![None; inputs * outputs * classes] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn idx(&self, input: usize, output: usize, class: usize) -> usize {
        debug_assert!(input < self.inputs && output < self.outputs && class < self.classes);
        (input * self.outputs + output) * self.classes + class
    }

    pub fn get(&self, input: usize, output: usize, class: usize) -> Option<f64> {
        self.values[self.idx(input, output, class)]
    }

    pub fn set(&mut self, input: usize, output: usize, class: usize, value: f64) {
        let i = self.idx(input, output, class);
        self.values[i] = Some(value);
    }

    pub fn clear(&mut self, input: usize, output: usize, class: usize) {
        let i = self.idx(input, output, class);
        self.values[i] = None;
    }

    pub fn is_fully_defined(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }

    pub fn undefined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Defined value or zero; only meaningful on a fully defined table.
    fn value(&self, input: usize, output: usize, class: usize) -> f64 {
        self.values[self.idx(input, output, class)].unwrap_or(0.0)
    }
}

/// Per-triple FIFO relaxation coefficients, default 1 (full coupling).
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTable {
    inputs: usize,
    outputs: usize,
    values: Vec<f64>,
}

impl CouplingTable {
    /// Every triple fully coupled.
    pub fn full(inputs: usize, outputs: usize) -> Self {
        Self::uniform(inputs, outputs, 1.0)
    }

    /// Every triple at the same coefficient.
    pub fn uniform(inputs: usize, outputs: usize, eta: f64) -> Self {
        CouplingTable { inputs, outputs, values: vec![eta; inputs * outputs * outputs] }
    }

    fn idx(&self, input: usize, restricting: usize, restricted: usize) -> usize {
        debug_assert!(
            input < self.inputs && restricting < self.outputs && restricted < self.outputs
        );
        (input * self.outputs + restricting) * self.outputs + restricted
    }

    pub fn get(&self, input: usize, restricting: usize, restricted: usize) -> f64 {
        self.values[self.idx(input, restricting, restricted)]
    }

    pub fn set(&mut self, input: usize, restricting: usize, restricted: usize, eta: f64) {
        let i = self.idx(input, restricting, restricted);
        self.values[i] = eta;
    }
}

/// Everything [`compute_node_flows`] needs for one node and step. Sending and
/// receiving may be in any common flow unit; the result comes back in the
/// same unit.
#[derive(Clone, Debug)]
pub struct NodeInputs {
    /// Per-input, per-class demand.
    pub sending: Vec<Vec<f64>>,
    /// Per-output supply.
    pub receiving: Vec<f64>,
    /// Per-input merge priorities, nonnegative, summing to 1.
    pub priorities: Vec<f64>,
    /// Fully defined split ratios.
    pub splits: SplitTable,
    /// FIFO relaxation coefficients.
    pub couplings: CouplingTable,
}

/// Realized flows through a node, per (input, output, class).
#[derive(Clone, Debug)]
pub struct NodeFlows {
    inputs: usize,
    outputs: usize,
    classes: usize,
    flows: Vec<f64>,
}

impl NodeFlows {
    fn zero(inputs: usize, outputs: usize, classes: usize) -> Self {
        NodeFlows { inputs, outputs, classes, flows: vec![0.0; inputs * outputs * classes] }
    }

    fn idx(&self, input: usize, output: usize, class: usize) -> usize {
        (input * self.outputs + output) * self.classes + class
    }

    pub fn flow(&self, input: usize, output: usize, class: usize) -> f64 {
        self.flows[self.idx(input, output, class)]
    }

    /// Total leaving one input for one class.
    pub fn input_outflow(&self, input: usize, class: usize) -> f64 {
        (0..self.outputs).map(|j| self.flow(input, j, class)).sum()
    }

    /// Total arriving at one output for one class.
    pub fn output_inflow(&self, output: usize, class: usize) -> f64 {
        (0..self.inputs).map(|i| self.flow(i, output, class)).sum()
    }

    pub fn input_total(&self, input: usize) -> f64 {
        (0..self.classes).map(|c| self.input_outflow(input, c)).sum()
    }

    pub fn output_total(&self, output: usize) -> f64 {
        (0..self.classes).map(|c| self.output_inflow(output, c)).sum()
    }
}

/// Replace zero priorities with a small uniform share so that every input can
/// move when it has demand. With M inputs of which Z have zero priority,
/// every priority maps to `p(M-Z)/M + Z/M^2`, which keeps the sum at 1; when
/// no priority is zero the input comes back unchanged.
pub fn regularize_priorities(priorities: &[f64]) -> Vec<f64> {
    let m = priorities.len();
    let zeros = priorities.iter().filter(|&&p| p == 0.0).count();
    if zeros == 0 || m == 0 {
        return priorities.to_vec();
    }
    let mf = m as f64;
    let zf = zeros as f64;
    priorities.iter().map(|&p| p * (mf - zf) / mf + zf / (mf * mf)).collect()
}

/// Divide `budget` among competitors in proportion to `weights`, never giving
/// anyone more than their cap, redistributing what the capped ones leave on
/// the table. A single competitor gets exactly `min(cap, budget)`.
fn waterfill(weights: &[f64], caps: &[f64], budget: f64, alloc: &mut [f64]) {
    let n = weights.len();
    if n == 1 {
        alloc[0] = caps[0].min(budget);
        return;
    }
    let total_cap: f64 = caps.iter().sum();
    if total_cap <= budget {
        alloc.copy_from_slice(caps);
        return;
    }
    let mut open = vec![true; n];
    let mut rem_budget = budget;
    let mut rem_weight: f64 = weights.iter().sum();
    loop {
        if rem_weight <= 0.0 {
            for k in 0..n {
                if open[k] {
                    alloc[k] = 0.0;
                }
            }
            return;
        }
        let level = rem_budget / rem_weight;
        let mut capped_any = false;
        for k in 0..n {
            if open[k] && caps[k] <= level * weights[k] {
                alloc[k] = caps[k];
                rem_budget -= caps[k];
                rem_weight -= weights[k];
                open[k] = false;
                capped_any = true;
            }
        }
        if !capped_any {
            for k in 0..n {
                if open[k] {
                    alloc[k] = (level * weights[k]).max(0.0);
                }
            }
            return;
        }
    }
}

/// Resolve one node: split per-class demands over the outputs, then allocate
/// each output's supply among the competing inputs.
///
/// Outputs are handled from most to least constrained, measured by remaining
/// supply per unit of demand-weighted priority. At the binding output the
/// supply is divided by [`waterfill`]; an input that only gets the fraction α
/// of its demand there has its pending demand toward every other output
/// scaled by `1 - η(1-α)`, where η is the coupling coefficient of the triple.
/// Inputs whose whole remaining program is fully coupled are then committed
/// at that rate; decoupled inputs keep competing output by output. Inputs
/// that fit under every relevant supply share are passed through unreduced.
///
/// Flows within one movement scale uniformly across classes, total inflow of
/// an output never exceeds its supply (beyond rounding), and an input's
/// outflow never exceeds its sending.
///
/// Panics if `inputs.splits` has undefined entries.
pub fn compute_node_flows(inp: &NodeInputs) -> NodeFlows {
    let m = inp.sending.len();
    let n = inp.receiving.len();
    let c = inp.splits.classes();
    assert!(inp.splits.is_fully_defined(), "split table has undefined entries");
    assert_eq!(inp.splits.inputs(), m);
    assert_eq!(inp.splits.outputs(), n);
    assert_eq!(inp.priorities.len(), m);
    for s in &inp.sending {
        assert_eq!(s.len(), c);
    }

    let mut out = NodeFlows::zero(m, n, c);
    if m == 0 || n == 0 {
        return out;
    }

    let reg = regularize_priorities(&inp.priorities);

    // Pending oriented demands and the priority weights, fixed at the initial
    // demand pattern so that decoupled competition stays independent of the
    // processing order.
    let pidx = |i: usize, j: usize| i * n + j;
    let mut pending = vec![0.0f64; m * n * c];
    let mut oriented_priority = vec![0.0f64; m * n];
    let mut active = vec![false; m];
    for i in 0..m {
        let total: f64 = inp.sending[i].iter().sum();
        if total <= 0.0 {
            continue;
        }
        active[i] = true;
        for j in 0..n {
            let mut s0 = 0.0;
            for cl in 0..c {
                let s = inp.sending[i][cl] * inp.splits.value(i, j, cl);
                pending[(i * n + j) * c + cl] = s;
                s0 += s;
            }
            oriented_priority[pidx(i, j)] = reg[i] * (s0 / total);
        }
    }

    let mut live = vec![true; n];
    let mut remaining = inp.receiving.clone();
    // Whether every reduction applied to this input so far was uniform over
    // its movements; only then is an early commit at the current rate sound.
    let mut uniform = vec![true; m];

    let pending_total = |pending: &[f64], i: usize, j: usize| -> f64 {
        let base = (i * n + j) * c;
        pending[base..base + c].iter().sum()
    };

    // Supply per unit oriented priority at each live output.
    let levels = |pending: &[f64], active: &[bool], live: &[bool], remaining: &[f64]| -> Vec<f64> {
        let mut lv = vec![f64::INFINITY; n];
        for j in 0..n {
            if !live[j] {
                continue;
            }
            let mut q = 0.0;
            for i in 0..m {
                if active[i] && pending_total(pending, i, j) > 0.0 {
                    q += oriented_priority[pidx(i, j)];
                }
            }
            if q > 0.0 {
                lv[j] = remaining[j] / q;
            }
        }
        lv
    };

    let realize_all = |pending: &mut [f64],
                       remaining: &mut [f64],
                       out: &mut NodeFlows,
                       live: &[bool],
                       i: usize| {
        for j in 0..n {
            if !live[j] {
                continue;
            }
            let base = (i * n + j) * c;
            let mut total = 0.0;
            for cl in 0..c {
                out.flows[base + cl] += pending[base + cl];
                total += pending[base + cl];
                pending[base + cl] = 0.0;
            }
            remaining[j] = (remaining[j] - total).max(0.0);
        }
    };

    loop {
        // Pass through every input that fits under the supply share its
        // priority commands at each of its outputs. Purely an optimization:
        // allocation at those outputs would cap them at full demand anyway.
        let mut lv = levels(&pending, &active, &live, &remaining);
        'peel: loop {
            for i in 0..m {
                if !active[i] {
                    continue;
                }
                let mut any = false;
                let mut fits = true;
                for j in 0..n {
                    if !live[j] {
                        continue;
                    }
                    let s = pending_total(&pending, i, j);
                    if s > 0.0 {
                        any = true;
                        if s > lv[j] * oriented_priority[pidx(i, j)] {
                            fits = false;
                            break;
                        }
                    }
                }
                if !any {
                    active[i] = false;
                } else if fits {
                    realize_all(&mut pending, &mut remaining, &mut out, &live, i);
                    active[i] = false;
                    lv = levels(&pending, &active, &live, &remaining);
                    continue 'peel;
                }
            }
            break;
        }

        // All remaining demand fits: realize it and stop.
        let mut any_pending = false;
        let mut oversubscribed = false;
        for j in 0..n {
            if !live[j] {
                continue;
            }
            let mut demand = 0.0;
            for i in 0..m {
                if active[i] {
                    demand += pending_total(&pending, i, j);
                }
            }
            if demand > 0.0 {
                any_pending = true;
                if demand > remaining[j] {
                    oversubscribed = true;
                }
            }
        }
        if !any_pending {
            break;
        }
        if !oversubscribed {
            for i in 0..m {
                if active[i] {
                    realize_all(&mut pending, &mut remaining, &mut out, &live, i);
                }
            }
            break;
        }

        // Bind the most constrained output.
        let mut jb = usize::MAX;
        for j in 0..n {
            if live[j] && lv[j].is_finite() && (jb == usize::MAX || lv[j] < lv[jb]) {
                jb = j;
            }
        }
        debug_assert!(jb != usize::MAX);

        let competitors: Vec<usize> = (0..m)
            .filter(|&i| active[i] && pending_total(&pending, i, jb) > 0.0)
            .collect();
        let caps: Vec<f64> =
            competitors.iter().map(|&i| pending_total(&pending, i, jb)).collect();
        let weights: Vec<f64> =
            competitors.iter().map(|&i| oriented_priority[pidx(i, jb)]).collect();
        let mut alloc = vec![0.0; competitors.len()];
        waterfill(&weights, &caps, remaining[jb], &mut alloc);

        let mut alpha = vec![1.0f64; m];
        let mut taken = 0.0;
        for (k, &i) in competitors.iter().enumerate() {
            let base = (i * n + jb) * c;
            if alloc[k] >= caps[k] {
                for cl in 0..c {
                    out.flows[base + cl] += pending[base + cl];
                }
                taken += caps[k];
            } else {
                let a = alloc[k] / caps[k];
                if c == 1 {
                    out.flows[base] += alloc[k];
                } else {
                    for cl in 0..c {
                        out.flows[base + cl] += a * pending[base + cl];
                    }
                }
                alpha[i] = a;
                taken += alloc[k];
            }
        }
        remaining[jb] = (remaining[jb] - taken).max(0.0);
        live[jb] = false;
        for i in 0..m {
            let base = (i * n + jb) * c;
            for cl in 0..c {
                pending[base + cl] = 0.0;
            }
        }

        // Throttle the coupled share of each reduced input's remaining
        // program, then commit the inputs whose whole history and remaining
        // program are fully coupled: later outputs only get less constrained,
        // so their rate is final.
        for &i in &competitors {
            if alpha[i] >= 1.0 {
                continue;
            }
            let mut all_full = true;
            for j in 0..n {
                if !live[j] || pending_total(&pending, i, j) <= 0.0 {
                    continue;
                }
                let eta = inp.couplings.get(i, jb, j);
                if eta < 1.0 {
                    all_full = false;
                }
                let factor = 1.0 - eta * (1.0 - alpha[i]);
                if factor < 1.0 {
                    let base = (i * n + j) * c;
                    for cl in 0..c {
                        pending[base + cl] *= factor;
                    }
                }
            }
            if !all_full {
                uniform[i] = false;
            } else if uniform[i] {
                for j in 0..n {
                    if !live[j] {
                        continue;
                    }
                    let s = pending_total(&pending, i, j);
                    if s <= 0.0 {
                        continue;
                    }
                    let base = (i * n + j) * c;
                    // The commit never overruns a supply when couplings are
                    // uniformly 1; the cap only engages on mixed-coupling
                    // programs whose histories diverged.
                    let realized = s.min(remaining[j]);
                    if realized >= s {
                        for cl in 0..c {
                            out.flows[base + cl] += pending[base + cl];
                        }
                    } else {
                        let r = realized / s;
                        for cl in 0..c {
                            out.flows[base + cl] += r * pending[base + cl];
                        }
                    }
                    remaining[j] = (remaining[j] - realized).max(0.0);
                    for cl in 0..c {
                        pending[base + cl] = 0.0;
                    }
                }
                active[i] = false;
            }
        }
    }

    out
}

/// Hook for reshaping how the split solver distributes the mass left over
/// once all movement loads are level. `outputs` names the undetermined
/// outputs of one (input, class); `weights` arrives supply-proportional and
/// may be edited in place. Weights that sum to zero fall back to uniform.
pub trait TerminalSplitBias {
    fn reweight(&self, input: usize, class: usize, outputs: &[usize], weights: &mut [f64]);
}

/// Keep the supply-proportional weighting.
pub struct NoBias;

impl TerminalSplitBias for NoBias {
    fn reweight(&self, _input: usize, _class: usize, _outputs: &[usize], _weights: &mut [f64]) {}
}

const RATIO_EQ_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;

/// Fill in the undefined entries of a split table.
///
/// Entries the table defines are returned untouched; a fully defined table
/// comes back as an exact copy. For each (input, class) the undefined entries
/// share whatever ratio mass the defined ones leave, so every class sums to 1
/// across the outputs.
///
/// Degenerate rows close immediately: a class without demand splits its
/// remainder uniformly, a row whose defined entries already reach 1 zeroes
/// the rest, and a single undefined entry takes the whole remainder. The
/// remaining mass is assigned iteratively: the most underloaded movement,
/// measured as oriented demand relative to the supply share the output offers
/// that input, is topped up until it reaches the most loaded one, and once
/// all loads are level (or nothing measurable remains) the rest spreads over
/// each row's open outputs in proportion to their supplies, subject to
/// `bias`. Outputs without supply take part only through that final uniform
/// fallback.
pub fn solve_undefined_split_ratios(
    sending: &[Vec<f64>],
    receiving: &[f64],
    priorities: &[f64],
    splits: &SplitTable,
    bias: &dyn TerminalSplitBias,
) -> SplitTable {
    let m = splits.inputs();
    let n = splits.outputs();
    let c = splits.classes();
    assert_eq!(sending.len(), m);
    assert_eq!(receiving.len(), n);
    assert_eq!(priorities.len(), m);

    let mut table = splits.clone();
    if table.is_fully_defined() {
        return table;
    }

    // Remainder each (input, class) still has to place, and where it can go.
    let mut open: Vec<Vec<usize>> = vec![Vec::new(); m * c];
    let mut remainder = vec![0.0f64; m * c];
    for i in 0..m {
        for cl in 0..c {
            let mut known = 0.0;
            let mut undef = Vec::new();
            for j in 0..n {
                match splits.get(i, j, cl) {
                    Some(v) => known += v,
                    None => undef.push(j),
                }
            }
            if undef.is_empty() {
                continue;
            }
            let rest = (1.0 - known).max(0.0);
            let demand = sending[i][cl];
            if demand <= 0.0 {
                // No traffic to steer; any unit-sum completion works.
                let share = rest / undef.len() as f64;
                for &j in &undef {
                    table.set(i, j, cl, share);
                }
            } else if rest <= 0.0 {
                for &j in &undef {
                    table.set(i, j, cl, 0.0);
                }
            } else if undef.len() == 1 {
                table.set(i, undef[0], cl, rest);
            } else {
                open[i * c + cl] = undef;
                remainder[i * c + cl] = rest;
            }
        }
    }
    if open.iter().all(|v| v.is_empty()) {
        return table;
    }

    // Static competition sets over the remaining freedom.
    let total_sending: Vec<f64> = sending.iter().map(|s| s.iter().sum()).collect();
    let reg = regularize_priorities(priorities);
    let in_u = |i: usize, j: usize| -> bool {
        (0..c).any(|cl| !open[i * c + cl].is_empty() && open[i * c + cl].contains(&j))
    };
    let mut u_sets: Vec<Vec<usize>> = Vec::with_capacity(n);
    for j in 0..n {
        u_sets.push((0..m).filter(|&i| in_u(i, j)).collect());
    }

    // Assigned mass so far for the open entries.
    let mut assigned = vec![0.0f64; m * n * c];
    let aidx = |i: usize, j: usize, cl: usize| (i * n + j) * c + cl;

    let max_rounds = 4 * (m * n * c + m * c) + 16;
    for _ in 0..max_rounds {
        // Ratio of assigned oriented demand to the supply share the output's
        // priority split offers this input. The estimate spreads each row's
        // remainder uniformly over its open outputs so weights stay positive.
        let mut oriented_priority = vec![0.0f64; m * n];
        let mut oriented_demand = vec![0.0f64; m * n];
        for i in 0..m {
            if total_sending[i] <= 0.0 {
                continue;
            }
            for j in 0..n {
                let mut est = 0.0;
                let mut firm = 0.0;
                for cl in 0..c {
                    let row = &open[i * c + cl];
                    let base = match table.get(i, j, cl) {
                        Some(v) => v,
                        None => assigned[aidx(i, j, cl)],
                    };
                    firm += sending[i][cl] * base;
                    let spread = if !row.is_empty() && row.contains(&j) {
                        remainder[i * c + cl] / row.len() as f64
                    } else {
                        0.0
                    };
                    est += sending[i][cl] * (base + spread);
                }
                oriented_priority[i * n + j] = reg[i] * (est / total_sending[i]);
                oriented_demand[i * n + j] = firm;
            }
        }
        let ratio = |i: usize, j: usize| -> f64 {
            let q: f64 = u_sets[j].iter().map(|&k| oriented_priority[k * n + j]).sum();
            oriented_demand[i * n + j] * q / (oriented_priority[i * n + j] * receiving[j])
        };

        // Rows still holding mass, and the outputs they can reach.
        let live_row = |i: usize, cl: usize| -> bool {
            !open[i * c + cl].is_empty() && remainder[i * c + cl] > 0.0
        };
        let live_input = |i: usize, j: usize| -> bool {
            (0..c).any(|cl| live_row(i, cl) && open[i * c + cl].contains(&j))
        };
        let mut high = 0.0f64;
        for j in 0..n {
            if receiving[j] <= 0.0 {
                continue;
            }
            for &i in &u_sets[j] {
                high = high.max(ratio(i, j));
            }
        }
        let mut best_j = usize::MAX;
        let mut best_min = f64::INFINITY;
        let mut mins = vec![f64::INFINITY; n];
        for j in 0..n {
            if receiving[j] <= 0.0 {
                continue;
            }
            for &i in &u_sets[j] {
                if live_input(i, j) {
                    let r = ratio(i, j);
                    if r < mins[j] {
                        mins[j] = r;
                    }
                }
            }
            if mins[j] < best_min {
                best_min = mins[j];
                best_j = j;
            }
        }
        if best_j == usize::MAX {
            break;
        }
        // Among tied outputs take the least loaded one overall.
        let mut target_j = usize::MAX;
        let mut target_load = f64::INFINITY;
        for j in 0..n {
            if mins[j] <= best_min * (1.0 + TIE_TOL) + TIE_TOL {
                let load: f64 = (0..m).map(|i| oriented_demand[i * n + j]).sum::<f64>()
                    / receiving[j];
                if load < target_load {
                    target_load = load;
                    target_j = j;
                }
            }
        }
        let jt = target_j;

        // Least served input at that output, then its smallest parcel of
        // remaining mass.
        let mut low = f64::INFINITY;
        for &i in &u_sets[jt] {
            if live_input(i, jt) {
                low = low.min(ratio(i, jt));
            }
        }
        let mut it = usize::MAX;
        let mut ct = usize::MAX;
        let mut parcel = f64::INFINITY;
        for &i in &u_sets[jt] {
            if !live_input(i, jt) || ratio(i, jt) > low * (1.0 + TIE_TOL) + TIE_TOL {
                continue;
            }
            for cl in 0..c {
                if live_row(i, cl) && open[i * c + cl].contains(&jt) {
                    let mass = sending[i][cl] * remainder[i * c + cl];
                    if mass < parcel {
                        parcel = mass;
                        it = i;
                        ct = cl;
                    }
                }
            }
        }
        if it == usize::MAX {
            break;
        }

        if low >= high - RATIO_EQ_TOL * high.max(1.0) {
            break;
        }

        // Raise the chosen movement toward the high-water ratio.
        let q: f64 = u_sets[jt].iter().map(|&k| oriented_priority[k * n + jt]).sum();
        let want = high * oriented_priority[it * n + jt] * receiving[jt] / q;
        let gap = want - oriented_demand[it * n + jt];
        let step = (gap / sending[it][ct]).min(remainder[it * c + ct]);
        if !(step > 0.0) {
            break;
        }
        assigned[aidx(it, jt, ct)] += step;
        remainder[it * c + ct] -= step;
        if remainder[it * c + ct] <= 0.0 {
            remainder[it * c + ct] = 0.0;
        }
    }

    // Loads are level (or progress is impossible): spread what remains over
    // each row's open outputs in proportion to supply and write everything
    // back.
    for i in 0..m {
        for cl in 0..c {
            let row = core::mem::take(&mut open[i * c + cl]);
            if row.is_empty() {
                continue;
            }
            let rest = remainder[i * c + cl];
            let mut weights: Vec<f64> =
                row.iter().map(|&j| receiving[j].max(0.0)).collect();
            bias.reweight(i, cl, &row, &mut weights);
            let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
            for (k, &j) in row.iter().enumerate() {
                let share = if total > 0.0 {
                    weights[k].max(0.0) / total
                } else {
                    1.0 / row.len() as f64
                };
                table.set(i, j, cl, assigned[aidx(i, j, cl)] + rest * share);
            }
        }
    }
    debug_assert!(table.is_fully_defined());
    out_sums_hold(sending, &table);
    table
}

#[cfg(debug_assertions)]
fn out_sums_hold(sending: &[Vec<f64>], table: &SplitTable) {
    for i in 0..table.inputs() {
        for cl in 0..table.classes() {
            if sending[i][cl] < 0.0 {
                continue;
            }
            let sum: f64 = (0..table.outputs()).map(|j| table.value(i, j, cl)).sum();
            debug_assert!(
                (sum - 1.0).abs() <= 1e-9,
                "split row ({i}, class {cl}) sums to {sum}"
            );
        }
    }
}

#[cfg(not(debug_assertions))]
fn out_sums_hold(_sending: &[Vec<f64>], _table: &SplitTable) {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defined(values: &[(usize, usize, usize, f64)], m: usize, n: usize, c: usize) -> SplitTable {
        let mut t = SplitTable::new(m, n, c);
        for &(i, j, cl, v) in values {
            t.set(i, j, cl, v);
        }
        t
    }

    fn node(
        sending: Vec<Vec<f64>>,
        receiving: Vec<f64>,
        priorities: Vec<f64>,
        splits: SplitTable,
        eta: f64,
    ) -> NodeInputs {
        let m = sending.len();
        let n = receiving.len();
        NodeInputs {
            sending,
            receiving,
            priorities,
            splits,
            couplings: CouplingTable::uniform(m, n, eta),
        }
    }

    #[test]
    fn regularize_keeps_positive_priorities_verbatim() {
        let p = vec![0.3, 0.7];
        let r = regularize_priorities(&p);
        assert_eq!(r[0].to_bits(), p[0].to_bits());
        assert_eq!(r[1].to_bits(), p[1].to_bits());
    }

    #[test]
    fn regularize_worked_examples() {
        assert_eq!(regularize_priorities(&[0.5, 0.5, 0.0, 0.0]), vec![0.375, 0.375, 0.125, 0.125]);
        assert_eq!(regularize_priorities(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn passthrough_is_verbatim() {
        let splits = defined(&[(0, 0, 0, 1.0), (0, 0, 1, 1.0)], 1, 1, 2);
        let flows = compute_node_flows(&node(
            vec![vec![800.0, 200.0]],
            vec![2000.0],
            vec![1.0],
            splits,
            1.0,
        ));
        assert_eq!(flows.flow(0, 0, 0), 800.0);
        assert_eq!(flows.flow(0, 0, 1), 200.0);
    }

    #[test]
    fn capped_passthrough_scales_classes_uniformly() {
        let splits = defined(&[(0, 0, 0, 1.0), (0, 0, 1, 1.0)], 1, 1, 2);
        let flows = compute_node_flows(&node(
            vec![vec![800.0, 200.0]],
            vec![500.0],
            vec![1.0],
            splits,
            1.0,
        ));
        assert!((flows.flow(0, 0, 0) - 400.0).abs() < 1e-12);
        assert!((flows.flow(0, 0, 1) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_supply_cap_is_exact() {
        let splits = defined(&[(0, 0, 0, 1.0)], 1, 1, 1);
        let flows = compute_node_flows(&node(
            vec![vec![1931.7260624001326]],
            vec![1711.0331407273786],
            vec![1.0],
            splits,
            1.0,
        ));
        assert_eq!(flows.flow(0, 0, 0).to_bits(), 1711.0331407273786f64.to_bits());
    }

    #[test]
    fn merge_within_supply_passes_both_inputs() {
        let splits = defined(&[(0, 0, 0, 1.0), (1, 0, 0, 1.0)], 2, 1, 1);
        let flows = compute_node_flows(&node(
            vec![vec![1000.0], vec![200.0]],
            vec![1200.0],
            vec![0.9, 0.1],
            splits,
            1.0,
        ));
        assert_eq!(flows.flow(0, 0, 0), 1000.0);
        assert_eq!(flows.flow(1, 0, 0), 200.0);
    }

    #[test]
    fn merge_splits_scarce_supply_by_priority() {
        let splits = defined(&[(0, 0, 0, 1.0), (1, 0, 0, 1.0)], 2, 1, 1);
        let flows = compute_node_flows(&node(
            vec![vec![2000.0], vec![200.0]],
            vec![1100.0],
            vec![0.9, 0.1],
            splits,
            1.0,
        ));
        assert!((flows.flow(0, 0, 0) - 990.0).abs() < 1e-9);
        assert!((flows.flow(1, 0, 0) - 110.0).abs() < 1e-9);
    }

    #[test]
    fn merge_redistributes_unused_priority_share() {
        let splits = defined(&[(0, 0, 0, 1.0), (1, 0, 0, 1.0)], 2, 1, 1);
        let flows = compute_node_flows(&node(
            vec![vec![2000.0], vec![100.0]],
            vec![1200.0],
            vec![0.9, 0.1],
            splits,
            1.0,
        ));
        assert!((flows.flow(0, 0, 0) - 1100.0).abs() < 1e-9);
        assert_eq!(flows.flow(1, 0, 0), 100.0);
    }

    #[test]
    fn zero_priority_inputs_still_move() {
        let splits = defined(&[(0, 0, 0, 1.0), (1, 0, 0, 1.0)], 2, 1, 1);
        let flows = compute_node_flows(&node(
            vec![vec![500.0], vec![500.0]],
            vec![600.0],
            vec![1.0, 0.0],
            splits,
            1.0,
        ));
        assert!((flows.flow(0, 0, 0) - 450.0).abs() < 1e-9);
        assert!((flows.flow(1, 0, 0) - 150.0).abs() < 1e-9);
    }

    #[test]
    fn coupled_diverge_throttles_both_movements() {
        let splits = defined(&[(0, 0, 0, 0.5), (0, 1, 0, 0.5)], 1, 2, 1);
        let flows = compute_node_flows(&node(
            vec![vec![1000.0]],
            vec![5000.0, 250.0],
            vec![1.0],
            splits,
            1.0,
        ));
        assert!((flows.flow(0, 0, 0) - 250.0).abs() < 1e-9);
        assert!((flows.flow(0, 1, 0) - 250.0).abs() < 1e-9);
    }

    #[test]
    fn decoupled_diverge_serves_each_output_independently() {
        let splits = defined(&[(0, 0, 0, 0.5), (0, 1, 0, 0.5)], 1, 2, 1);
        let flows = compute_node_flows(&node(
            vec![vec![1000.0]],
            vec![5000.0, 250.0],
            vec![1.0],
            splits,
            0.0,
        ));
        assert!((flows.flow(0, 0, 0) - 500.0).abs() < 1e-9);
        assert!((flows.flow(0, 1, 0) - 250.0).abs() < 1e-9);
    }

    #[test]
    fn two_by_two_competition_matches_hand_solution() {
        // Input 0 splits evenly, input 1 sends everything to output 0.
        // Output 0 binds at level 800: alpha_0 = 0.4, alpha_1 = 2/3.
        let splits = defined(
            &[(0, 0, 0, 0.5), (0, 1, 0, 0.5), (1, 0, 0, 1.0), (1, 1, 0, 0.0)],
            2,
            2,
            1,
        );
        let flows = compute_node_flows(&node(
            vec![vec![1000.0], vec![600.0]],
            vec![600.0, 1000.0],
            vec![0.5, 0.5],
            splits,
            1.0,
        ));
        assert!((flows.flow(0, 0, 0) - 200.0).abs() < 1e-9);
        assert!((flows.flow(0, 1, 0) - 200.0).abs() < 1e-9);
        assert!((flows.flow(1, 0, 0) - 400.0).abs() < 1e-9);
        assert_eq!(flows.flow(1, 1, 0), 0.0);
    }

    #[test]
    fn multiclass_coupled_diverge_keeps_class_shares() {
        // Class 0 all to output 0; class 1 sends 0.25 there, 0.75 to output 1.
        let splits = defined(
            &[(0, 0, 0, 1.0), (0, 1, 0, 0.0), (0, 0, 1, 0.25), (0, 1, 1, 0.75)],
            1,
            2,
            2,
        );
        let inp = node(
            vec![vec![600.0, 400.0]],
            vec![350.0, 1000.0],
            vec![1.0],
            splits.clone(),
            1.0,
        );
        let flows = compute_node_flows(&inp);
        // Output 0 demand 700 against supply 350: alpha = 0.5 everywhere.
        assert!((flows.flow(0, 0, 0) - 300.0).abs() < 1e-9);
        assert!((flows.flow(0, 0, 1) - 50.0).abs() < 1e-9);
        assert!((flows.flow(0, 1, 1) - 150.0).abs() < 1e-9);

        let decoupled = compute_node_flows(&node(
            vec![vec![600.0, 400.0]],
            vec![350.0, 1000.0],
            vec![1.0],
            splits,
            0.0,
        ));
        assert!((decoupled.flow(0, 0, 0) + decoupled.flow(0, 0, 1) - 350.0).abs() < 1e-9);
        assert!((decoupled.flow(0, 1, 1) - 300.0).abs() < 1e-9);
    }

    #[test]
    fn empty_input_contributes_nothing() {
        let splits = defined(&[(0, 0, 0, 1.0), (1, 0, 0, 1.0)], 2, 1, 1);
        let flows = compute_node_flows(&node(
            vec![vec![0.0], vec![400.0]],
            vec![300.0],
            vec![0.5, 0.5],
            splits,
            1.0,
        ));
        assert_eq!(flows.flow(0, 0, 0), 0.0);
        assert_eq!(flows.flow(1, 0, 0), 300.0);
    }

    #[test]
    fn flow_accessors_aggregate() {
        let splits = defined(&[(0, 0, 0, 0.5), (0, 1, 0, 0.5)], 1, 2, 1);
        let flows = compute_node_flows(&node(
            vec![vec![800.0]],
            vec![1000.0, 1000.0],
            vec![1.0],
            splits,
            1.0,
        ));
        assert_eq!(flows.input_outflow(0, 0), 800.0);
        assert_eq!(flows.input_total(0), 800.0);
        assert_eq!(flows.output_inflow(0, 0), 400.0);
        assert_eq!(flows.output_total(1), 400.0);
    }

    #[test]
    fn solver_leaves_defined_tables_verbatim() {
        let splits = defined(&[(0, 0, 0, 0.25), (0, 1, 0, 0.75)], 1, 2, 1);
        let solved = solve_undefined_split_ratios(
            &[vec![900.0]],
            &[500.0, 500.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        assert_eq!(solved.get(0, 0, 0).unwrap().to_bits(), 0.25f64.to_bits());
        assert_eq!(solved.get(0, 1, 0).unwrap().to_bits(), 0.75f64.to_bits());
    }

    #[test]
    fn cold_start_splits_proportional_to_supply() {
        let splits = SplitTable::new(1, 2, 1);
        let solved = solve_undefined_split_ratios(
            &[vec![1000.0]],
            &[600.0, 400.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        assert_eq!(solved.get(0, 0, 0).unwrap(), 0.6);
        assert_eq!(solved.get(0, 1, 0).unwrap(), 0.4);
    }

    #[test]
    fn known_mass_leaves_remainder_for_the_open_outputs() {
        let mut splits = SplitTable::new(1, 3, 1);
        splits.set(0, 0, 0, 0.5);
        let solved = solve_undefined_split_ratios(
            &[vec![1000.0]],
            &[1000.0, 300.0, 100.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        assert_eq!(solved.get(0, 0, 0).unwrap(), 0.5);
        assert!((solved.get(0, 1, 0).unwrap() - 0.375).abs() < 1e-12);
        assert!((solved.get(0, 2, 0).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn single_open_entry_takes_the_remainder() {
        let mut splits = SplitTable::new(1, 2, 1);
        splits.set(0, 0, 0, 0.7);
        let solved =
            solve_undefined_split_ratios(&[vec![500.0]], &[1.0, 1.0], &[1.0], &splits, &NoBias);
        assert!((solved.get(0, 1, 0).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn saturated_rows_zero_their_open_entries() {
        let mut splits = SplitTable::new(1, 3, 1);
        splits.set(0, 0, 0, 0.6);
        splits.set(0, 1, 0, 0.4);
        let solved = solve_undefined_split_ratios(
            &[vec![500.0]],
            &[1.0, 1.0, 1.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        assert_eq!(solved.get(0, 2, 0).unwrap(), 0.0);
    }

    #[test]
    fn demandless_classes_complete_uniformly() {
        let splits = SplitTable::new(1, 4, 1);
        let solved = solve_undefined_split_ratios(
            &[vec![0.0]],
            &[9.0, 1.0, 5.0, 5.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        for j in 0..4 {
            assert_eq!(solved.get(0, j, 0).unwrap(), 0.25);
        }
    }

    #[test]
    fn zero_supply_output_takes_no_mass() {
        let splits = SplitTable::new(1, 3, 1);
        let solved = solve_undefined_split_ratios(
            &[vec![800.0]],
            &[600.0, 0.0, 200.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        assert!((solved.get(0, 0, 0).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(solved.get(0, 1, 0).unwrap(), 0.0);
        assert!((solved.get(0, 2, 0).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn all_zero_supplies_fall_back_to_uniform() {
        let splits = SplitTable::new(1, 2, 1);
        let solved =
            solve_undefined_split_ratios(&[vec![800.0]], &[0.0, 0.0], &[1.0], &splits, &NoBias);
        assert_eq!(solved.get(0, 0, 0).unwrap(), 0.5);
        assert_eq!(solved.get(0, 1, 0).unwrap(), 0.5);
    }

    #[test]
    fn partial_class_levels_loads_before_spreading() {
        // Class 0's splits are known and load output 0 twice as hard as
        // output 1; class 1 is open and must first top up output 1.
        let mut splits = SplitTable::new(1, 2, 2);
        splits.set(0, 0, 0, 0.8);
        splits.set(0, 1, 0, 0.2);
        let solved = solve_undefined_split_ratios(
            &[vec![500.0, 500.0]],
            &[600.0, 300.0],
            &[1.0],
            &splits,
            &NoBias,
        );
        let b0 = solved.get(0, 0, 1).unwrap();
        let b1 = solved.get(0, 1, 1).unwrap();
        assert!((b0 + b1 - 1.0).abs() < 1e-12);
        // Final oriented loads end up equal across the two outputs.
        let load0 = (500.0 * 0.8 + 500.0 * b0) / 600.0;
        let load1 = (500.0 * 0.2 + 500.0 * b1) / 300.0;
        assert!((load0 - load1).abs() < 1e-9, "loads {load0} vs {load1}");
    }

    #[test]
    fn bias_hook_reshapes_the_terminal_spread() {
        struct ToFirst;
        impl TerminalSplitBias for ToFirst {
            fn reweight(&self, _i: usize, _c: usize, _outputs: &[usize], w: &mut [f64]) {
                for (k, x) in w.iter_mut().enumerate() {
                    *x = if k == 0 { 1.0 } else { 0.0 };
                }
            }
        }
        let splits = SplitTable::new(1, 2, 1);
        let solved = solve_undefined_split_ratios(
            &[vec![700.0]],
            &[100.0, 900.0],
            &[1.0],
            &splits,
            &ToFirst,
        );
        assert_eq!(solved.get(0, 0, 0).unwrap(), 1.0);
        assert_eq!(solved.get(0, 1, 0).unwrap(), 0.0);
    }

    prop_compose! {
        fn arb_node(max_dim: usize)
            (m in 1..=max_dim, n in 1..=max_dim, c in 1usize..=3)
            (sending in proptest::collection::vec(
                proptest::collection::vec(0.0f64..2500.0, c), m),
             receiving in proptest::collection::vec(0.0f64..3000.0, n),
             raw_p in proptest::collection::vec(0.0f64..1.0, m),
             raw_splits in proptest::collection::vec(0.001f64..1.0, m * n * c),
             m in Just(m), n in Just(n), c in Just(c))
            -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, SplitTable) {
            let total: f64 = raw_p.iter().sum();
            let priorities: Vec<f64> = if total > 0.0 {
                let mut p: Vec<f64> = raw_p.iter().map(|x| x / total).collect();
                let sum: f64 = p.iter().sum();
                p[0] += 1.0 - sum;
                p
            } else {
                vec![1.0 / m as f64; m]
            };
            let mut table = SplitTable::new(n0(m), n, c);
            for i in 0..m {
                for cl in 0..c {
                    let row: Vec<f64> =
                        (0..n).map(|j| raw_splits[(i * n + j) * c + cl]).collect();
                    let s: f64 = row.iter().sum();
                    for j in 0..n {
                        table.set(i, j, cl, row[j] / s);
                    }
                }
            }
            (sending, receiving, priorities, table)
        }
    }

    // prop_compose's generated code shadows `m`; keep the table's input
    // count tied to the outer value.
    fn n0(m: usize) -> usize {
        m
    }

    proptest! {
        #[test]
        fn flows_respect_demand_and_supply((sending, receiving, priorities, splits) in arb_node(4), eta in 0.0f64..=1.0) {
            let m = sending.len();
            let n = receiving.len();
            let c = splits.classes();
            let flows = compute_node_flows(&NodeInputs {
                sending: sending.clone(),
                receiving: receiving.clone(),
                priorities,
                splits: splits.clone(),
                couplings: CouplingTable::uniform(m, n, eta),
            });
            for i in 0..m {
                for j in 0..n {
                    for cl in 0..c {
                        let f = flows.flow(i, j, cl);
                        prop_assert!(f >= 0.0);
                        let s = sending[i][cl] * splits.get(i, j, cl).unwrap();
                        prop_assert!(f <= s + 1e-9 * s.max(1.0), "flow {f} exceeds demand {s}");
                    }
                }
            }
            for j in 0..n {
                let inflow = flows.output_total(j);
                prop_assert!(inflow <= receiving[j] + 1e-9 * receiving[j].max(1.0),
                    "inflow {inflow} exceeds supply {}", receiving[j]);
            }
        }

        #[test]
        fn full_coupling_scales_each_input_uniformly((sending, receiving, priorities, splits) in arb_node(4)) {
            let m = sending.len();
            let n = receiving.len();
            let c = splits.classes();
            let flows = compute_node_flows(&NodeInputs {
                sending: sending.clone(),
                receiving,
                priorities,
                splits: splits.clone(),
                couplings: CouplingTable::full(m, n),
            });
            for i in 0..m {
                let mut rate = None;
                for j in 0..n {
                    for cl in 0..c {
                        let s = sending[i][cl] * splits.get(i, j, cl).unwrap();
                        if s > 1e-9 {
                            let r = flows.flow(i, j, cl) / s;
                            if let Some(prev) = rate {
                                prop_assert!((r - prev as f64).abs() < 1e-6,
                                    "input {i} rates {prev} vs {r}");
                            }
                            rate = Some(r);
                        }
                    }
                }
            }
        }

        #[test]
        fn flows_scale_with_the_unit((sending, receiving, priorities, splits) in arb_node(3), lambda in 0.01f64..100.0) {
            let m = sending.len();
            let n = receiving.len();
            let c = splits.classes();
            let base = compute_node_flows(&NodeInputs {
                sending: sending.clone(),
                receiving: receiving.clone(),
                priorities: priorities.clone(),
                splits: splits.clone(),
                couplings: CouplingTable::full(m, n),
            });
            let scaled = compute_node_flows(&NodeInputs {
                sending: sending.iter().map(|r| r.iter().map(|x| x * lambda).collect()).collect(),
                receiving: receiving.iter().map(|x| x * lambda).collect(),
                priorities,
                splits: splits.clone(),
                couplings: CouplingTable::full(m, n),
            });
            for i in 0..m {
                for j in 0..n {
                    for cl in 0..c {
                        let a = base.flow(i, j, cl) * lambda;
                        let b = scaled.flow(i, j, cl);
                        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn solver_rows_sum_to_one((sending, receiving, priorities, _full) in arb_node(3), keep in proptest::collection::vec(proptest::bool::ANY, 27)) {
            let m = sending.len();
            let n = receiving.len();
            let c = _full.classes();
            // Blank out a random subset of entries, rescaling what stays so
            // partial rows keep a nonnegative remainder.
            let mut partial = SplitTable::new(m, n, c);
            for i in 0..m {
                for cl in 0..c {
                    for j in 0..n {
                        if keep[(i * n + j) % keep.len()] {
                            let v = _full.get(i, j, cl).unwrap();
                            partial.set(i, j, cl, v);
                        }
                    }
                }
            }
            let solved = solve_undefined_split_ratios(&sending, &receiving, &priorities, &partial, &NoBias);
            prop_assert!(solved.is_fully_defined());
            for i in 0..m {
                for cl in 0..c {
                    let mut sum = 0.0;
                    for j in 0..n {
                        let v = solved.get(i, j, cl).unwrap();
                        prop_assert!((-1e-12..=1.0 + 1e-9).contains(&v), "value {v}");
                        sum += v;
                        if let Some(orig) = partial.get(i, j, cl) {
                            prop_assert_eq!(orig.to_bits(), v.to_bits());
                        }
                    }
                    prop_assert!((sum - 1.0).abs() <= 1e-9, "row ({i},{cl}) sums to {sum}");
                }
            }
        }
    }
}
