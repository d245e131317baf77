//! Deterministic generators for tests and benchmarks.
//!
//! Everything here is seeded and reproducible: the same seed always yields
//! the same scenario or node, so failures can be replayed by seed alone.
//! Gated behind the `fixtures` feature; not part of the simulation API.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::calib::OfframpNodeTemplate;
use crate::net::{
    AccessMode, ClassId, ClassKind, DemandEntry, DemandProfile, FundamentalDiagram, LaneGroup,
    Link, LinkId, LinkRole, Network, Node, VehicleClass,
};
use crate::node::{CouplingTable, SplitTable};
use crate::sim::{OfframpSplitSeries, Scenario};

/// Small deterministic generator (splitmix64). Not for cryptography; for
/// reproducible test inputs.
#[derive(Clone, Debug)]
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform in 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

/// A full day on a randomized single-pipe corridor: origin queue, a chain
/// of cells with one offramp and one onramp somewhere, and a sink. Demands,
/// diagrams, exit fractions, class mix, and starting densities all vary
/// with the seed; the scenario always passes validation at a 5 s step.
pub fn random_corridor_scenario(rng: &mut Rng) -> Scenario {
    let cells = 3 + rng.below(14);
    let class_count = 1 + rng.below(7);
    let free_flow = rng.range(30.0, 70.0);
    let wave = rng.range(8.0, 20.0);
    let jam = rng.range(120.0, 220.0);
    let apex = free_flow * wave * jam / (free_flow + wave);
    let fd = FundamentalDiagram {
        capacity: apex * rng.range(1.0, 1.3),
        free_flow,
        wave,
        jam_density: jam,
    };

    let gp = |name: String, role: LinkRole, length: f64| Link {
        name,
        role,
        lane_group: LaneGroup::Gp,
        length,
        lanes: 1,
        fd,
        friction: 0.0,
        gp_partner: None,
    };

    // 5 s steps all day; every link long enough for the fastest wave.
    let dt = 1.0 / 720.0;
    let min_len = fd.free_flow.max(fd.wave) * dt;

    let mut links = vec![gp("queue".into(), LinkRole::Origin, 0.3)];
    for i in 0..cells {
        let len = rng.range(min_len * 1.2, 0.6);
        links.push(gp(format!("cell{i}"), LinkRole::Ordinary, len));
    }
    links.push(gp("sink".into(), LinkRole::Destination, 0.5));
    let sink = LinkId(cells + 1);
    let offramp = LinkId(links.len());
    links.push(Link {
        lane_group: LaneGroup::Offramp,
        ..gp("exit".into(), LinkRole::Destination, 0.3)
    });
    let onramp = LinkId(links.len());
    links.push(Link {
        lane_group: LaneGroup::Onramp,
        ..gp("ramp".into(), LinkRole::Origin, 0.3)
    });

    let offramp_at = rng.below(cells + 1);
    let onramp_at = rng.below(cells + 1);
    let ramp_priority = rng.range(0.05, 0.95);
    let mut nodes = Vec::new();
    for k in 0..=cells {
        let inp = if k == 0 { LinkId(0) } else { LinkId(k) };
        let out = if k == cells { sink } else { LinkId(k + 1) };
        let mut inputs = vec![inp];
        let mut outputs = vec![out];
        let mut priorities = vec![1.0];
        if k == offramp_at {
            outputs.push(offramp);
        }
        if k == onramp_at {
            inputs.push(onramp);
            priorities = vec![1.0 - ramp_priority, ramp_priority];
        }
        nodes.push(Node {
            name: format!("n{k}"),
            inputs,
            outputs,
            priorities,
            is_gate: false,
            known_splits: Vec::new(),
            restrictions: Vec::new(),
        });
    }

    // At most one class may be managed-eligible.
    let classes = (0..class_count)
        .map(|c| VehicleClass {
            name: format!("c{c}"),
            kind: if c == 1 { ClassKind::Eligible } else { ClassKind::GpOnly },
        })
        .collect();

    // Hourly demand, one series per class at each origin.
    let per_class = 4000.0 / class_count as f64;
    let mut entries = Vec::new();
    for c in 0..class_count {
        entries.push(DemandEntry {
            origin: LinkId(0),
            class: ClassId(c),
            flows: (0..24).map(|_| rng.range(0.0, per_class)).collect(),
        });
        entries.push(DemandEntry {
            origin: onramp,
            class: ClassId(c),
            flows: (0..24).map(|_| rng.range(0.0, 1200.0 / class_count as f64)).collect(),
        });
    }

    // Mainline cells may start loaded; queues and the sink start empty.
    let initial_densities = if rng.chance(0.5) {
        links
            .iter()
            .map(|l| {
                if l.role == LinkRole::Ordinary {
                    let mut row = vec![0.0; class_count];
                    let budget = rng.range(0.0, 0.3 * jam);
                    for d in row.iter_mut() {
                        *d = budget / class_count as f64;
                    }
                    row
                } else {
                    vec![0.0; class_count]
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    Scenario {
        net: Network { access: AccessMode::Full, classes, links, nodes },
        demand: DemandProfile {
            interval_hours: 1.0,
            eligible_fraction: 0.0,
            entries,
        },
        dt_hours: dt,
        steps: 17_280,
        initial_densities,
        offramp_splits: vec![OfframpSplitSeries {
            offramp,
            betas: (0..24).map(|_| rng.unit()).collect(),
        }],
        gate_shares: Vec::new(),
    }
}

/// A randomized split-completion problem: per-class sendings, output
/// supplies, merge priorities, and a table whose rows are fully defined,
/// partially defined, or blank.
#[derive(Clone, Debug)]
pub struct SplitProblem {
    pub sending: Vec<Vec<f64>>,
    pub receiving: Vec<f64>,
    pub priorities: Vec<f64>,
    pub splits: SplitTable,
}

pub fn random_split_problem(rng: &mut Rng) -> SplitProblem {
    let m = 1 + rng.below(3);
    let n = 1 + rng.below(3);
    let classes = 1 + rng.below(3);

    let mut sending = Vec::with_capacity(m);
    for _ in 0..m {
        let row: Vec<f64> = (0..classes)
            .map(|_| if rng.chance(0.15) { 0.0 } else { rng.range(0.0, 3000.0) })
            .collect();
        sending.push(row);
    }
    let receiving: Vec<f64> = (0..n).map(|_| rng.range(50.0, 6000.0)).collect();
    let mut priorities: Vec<f64> = (0..m).map(|_| rng.range(0.05, 1.0)).collect();
    let total: f64 = priorities.iter().sum();
    for p in priorities.iter_mut() {
        *p /= total;
    }

    let mut splits = SplitTable::new(m, n, classes);
    for i in 0..m {
        for c in 0..classes {
            match rng.below(3) {
                // Blank row: entirely the solver's problem.
                0 => {}
                // Fully defined row, normalized.
                1 => {
                    let raw: Vec<f64> = (0..n).map(|_| rng.range(0.01, 1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    for (j, x) in raw.iter().enumerate() {
                        splits.set(i, j, c, x / sum);
                    }
                }
                // Partial row: some outputs pinned below a full share.
                _ => {
                    let defined = 1 + rng.below(n);
                    if defined < n {
                        let budget = rng.range(0.0, 0.9);
                        let raw: Vec<f64> = (0..defined).map(|_| rng.range(0.01, 1.0)).collect();
                        let sum: f64 = raw.iter().sum();
                        for (j, x) in raw.iter().enumerate() {
                            splits.set(i, j, c, x / sum * budget);
                        }
                    } else {
                        let raw: Vec<f64> = (0..n).map(|_| rng.range(0.01, 1.0)).collect();
                        let sum: f64 = raw.iter().sum();
                        for (j, x) in raw.iter().enumerate() {
                            splits.set(i, j, c, x / sum);
                        }
                    }
                }
            }
        }
    }

    SplitProblem { sending, receiving, priorities, splits }
}

/// A randomized offramp node frozen for exit-fraction identification. The
/// offramp's own supply always exceeds the deliverable flow, matching the
/// measurement assumption; other outputs may constrain freely.
pub fn random_exit_template(rng: &mut Rng) -> OfframpNodeTemplate {
    let m = 1 + rng.below(3);
    let n = 2 + rng.below(2);
    let classes = 1 + rng.below(3);
    let demand_bracket = rng.chance(0.5);
    let offramp = rng.below(n);

    let mut sending = Vec::with_capacity(m);
    for _ in 0..m {
        sending.push((0..classes).map(|_| rng.range(0.0, 3000.0)).collect::<Vec<f64>>());
    }
    let total_sending: f64 = sending.iter().flatten().sum();

    let mut receiving: Vec<f64> = (0..n).map(|_| rng.range(100.0, 6000.0)).collect();
    receiving[offramp] = total_sending * rng.range(1.1, 2.0) + 500.0;

    let mut priorities: Vec<f64> = (0..m).map(|_| rng.range(0.05, 1.0)).collect();
    let total: f64 = priorities.iter().sum();
    for p in priorities.iter_mut() {
        *p /= total;
    }

    let mut variable = vec![vec![false; classes]; m];
    let mut routing = vec![vec![vec![0.0; n]; classes]; m];
    for i in 0..m {
        for c in 0..classes {
            variable[i][c] = rng.chance(0.7);
            let row = &mut routing[i][c];
            for x in row.iter_mut() {
                *x = rng.range(0.01, 1.0);
            }
            // Variable rows share only the non-offramp outputs. Fixed rows
            // may feed the offramp, except under the demand bracket, whose
            // bound presumes they do not.
            if variable[i][c] || demand_bracket {
                row[offramp] = 0.0;
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for x in row.iter_mut() {
                    *x /= sum;
                }
            } else {
                let share = 1.0 / (n - 1) as f64;
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if j == offramp { 0.0 } else { share };
                }
            }
        }
    }

    OfframpNodeTemplate {
        sending,
        receiving,
        priorities,
        couplings: CouplingTable::full(m, n),
        offramp,
        variable,
        routing,
        demand_bracket,
    }
}

/// The two hidden exit-fraction series of [`round_trip_scenario`], indexed
/// like its offramp split series.
pub const ROUND_TRIP_BETAS: [[f64; 6]; 2] = [
    [0.103, 0.100, 0.098, 0.098, 0.102, 0.103],
    [0.097, 0.099, 0.103, 0.102, 0.098, 0.096],
];

/// Ten mainline cells, exits after the third and seventh, and a capacity
/// drop over the last two cells that queues during the midday peak. Returns
/// the scenario without exit fractions plus the hidden truth series, so a
/// probe run at the truth can manufacture calibration measurements.
pub fn round_trip_scenario() -> (Scenario, Vec<OfframpSplitSeries>) {
    let main = FundamentalDiagram {
        capacity: 4000.0,
        free_flow: 65.0,
        wave: 12.0,
        jam_density: 380.0,
    };
    let bottleneck = FundamentalDiagram {
        capacity: 3200.0,
        free_flow: 58.0,
        wave: 12.0,
        jam_density: 320.0,
    };
    let ramp = FundamentalDiagram {
        capacity: 1900.0,
        free_flow: 45.0,
        wave: 10.0,
        jam_density: 200.0,
    };

    let link = |name: &str, role, group, length, lanes, fd| Link {
        name: name.into(),
        role,
        lane_group: group,
        length,
        lanes,
        fd,
        friction: 0.0,
        gp_partner: None,
    };

    let off1 = LinkId(12);
    let off2 = LinkId(13);
    let mut links = vec![link("origin", LinkRole::Origin, LaneGroup::Gp, 0.3, 2, main)];
    for i in 1..=10 {
        let fd = if i >= 9 { bottleneck } else { main };
        links.push(link(&format!("cell{i}"), LinkRole::Ordinary, LaneGroup::Gp, 0.5, 2, fd));
    }
    links.push(link("sink", LinkRole::Destination, LaneGroup::Gp, 0.5, 2, bottleneck));
    links.push(link("exit-a", LinkRole::Destination, LaneGroup::Offramp, 0.4, 1, ramp));
    links.push(link("exit-b", LinkRole::Destination, LaneGroup::Offramp, 0.4, 1, ramp));

    let mut nodes = Vec::new();
    for i in 0..=10 {
        let mut outputs = vec![LinkId(i + 1)];
        if i == 3 {
            outputs.push(off1);
        }
        if i == 7 {
            outputs.push(off2);
        }
        nodes.push(Node {
            name: format!("n{i}"),
            inputs: vec![LinkId(i)],
            outputs,
            priorities: vec![1.0],
            is_gate: false,
            known_splits: Vec::new(),
            restrictions: Vec::new(),
        });
    }

    let scenario = Scenario {
        net: Network {
            access: AccessMode::Full,
            classes: vec![VehicleClass { name: "veh".into(), kind: ClassKind::GpOnly }],
            links,
            nodes,
        },
        demand: DemandProfile {
            interval_hours: 0.25,
            eligible_fraction: 0.0,
            entries: vec![DemandEntry {
                origin: LinkId(0),
                class: ClassId(0),
                flows: vec![2800.0, 3200.0, 4300.0, 4300.0, 3400.0, 2800.0],
            }],
        },
        dt_hours: 1.0 / 144.0,
        steps: 216,
        initial_densities: Vec::new(),
        offramp_splits: Vec::new(),
        gate_shares: Vec::new(),
    };
    let truth = vec![
        OfframpSplitSeries { offramp: off1, betas: ROUND_TRIP_BETAS[0].to_vec() },
        OfframpSplitSeries { offramp: off2, betas: ROUND_TRIP_BETAS[1].to_vec() },
    ];
    (scenario, truth)
}
