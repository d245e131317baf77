//! Performance metrics: the hand-checked single-observation values, exact
//! GP/managed additivity, time-partition additivity, and agreement between
//! the in-memory computation and recomputation from exported tables.

use hovsim_cli::export::{write_contours, write_links, write_run_record, RunRecord};
use hovsim_cli::metrics::{compute_metrics, metrics_from_dir, render_metrics};
use hovsim_core::net::{
    AccessMode, ClassKind, FundamentalDiagram, LaneGroup, Link, LinkRole, Network, Node,
    VehicleClass,
};
use hovsim_core::sim::{SimConfig, Simulator};

fn fd() -> FundamentalDiagram {
    FundamentalDiagram { capacity: 2000.0, free_flow: 60.0, wave: 12.0, jam_density: 180.0 }
}

fn link(name: &str, role: LinkRole, group: LaneGroup, length: f64) -> Link {
    Link {
        name: name.into(),
        role,
        lane_group: group,
        length,
        lanes: 1,
        fd: fd(),
        friction: 0.0,
        gp_partner: None,
    }
}

/// One GP observation: density 40 veh/mi on 2 mi for 5 min at 30 mph under
/// a 45 mph threshold.
#[test]
fn single_observation_produces_the_hand_checked_values() {
    let net = Network {
        access: AccessMode::Full,
        classes: vec![VehicleClass { name: "car".into(), kind: ClassKind::GpOnly }],
        links: vec![link("a", LinkRole::Ordinary, LaneGroup::Gp, 2.0)],
        nodes: vec![],
    };
    let out = hovsim_core::sim::SimOutput {
        dt_hours: 5.0 / 60.0,
        steps: 1,
        interval_steps: 1,
        density: vec![vec![40.0]],
        flow: vec![vec![40.0 * 30.0]],
        speed: vec![vec![30.0]],
        final_densities: vec![vec![40.0]],
        injected: 0.0,
        discharged: 0.0,
        stored_initial: 80.0,
        stored_final: 80.0,
        clamped_negative: 0.0,
        offramp_stats: vec![],
    };
    let m = compute_metrics(&out, &net, 45.0);
    assert!((m.gp.vht - 6.666_666_666_666_667).abs() < 1e-6, "vht {}", m.gp.vht);
    assert!((m.gp.vmt - 200.0).abs() < 1e-6, "vmt {}", m.gp.vmt);
    assert!((m.gp.delay - 2.222_222_222_222_222).abs() < 1e-6, "delay {}", m.gp.delay);
    assert_eq!(m.managed.vht, 0.0);
    let total = m.total();
    assert_eq!(total.vht, m.gp.vht);
}

fn two_lane_corridor() -> hovsim_core::sim::Scenario {
    use hovsim_core::net::{ClassId, DemandEntry, DemandProfile, LinkId};
    let mut ml = link("m", LinkRole::Ordinary, LaneGroup::Managed, 0.5);
    ml.fd.free_flow = 65.0;
    ml.friction = 0.3;
    ml.gp_partner = Some(LinkId(1));
    let net = Network {
        access: AccessMode::Full,
        classes: vec![
            VehicleClass { name: "car".into(), kind: ClassKind::GpOnly },
            VehicleClass { name: "pool".into(), kind: ClassKind::Eligible },
        ],
        links: vec![
            link("orig", LinkRole::Origin, LaneGroup::Gp, 0.3),
            link("g", LinkRole::Ordinary, LaneGroup::Gp, 0.5),
            ml,
            link("sink", LinkRole::Destination, LaneGroup::Gp, 0.5),
        ],
        nodes: vec![
            Node {
                name: "n0".into(),
                inputs: vec![LinkId(0)],
                outputs: vec![LinkId(1), LinkId(2)],
                priorities: vec![1.0],
                is_gate: false,
                known_splits: vec![],
                restrictions: vec![],
            },
            Node {
                name: "n1".into(),
                inputs: vec![LinkId(1), LinkId(2)],
                outputs: vec![LinkId(3)],
                priorities: vec![0.7, 0.3],
                is_gate: false,
                known_splits: vec![],
                restrictions: vec![],
            },
        ],
    };
    hovsim_core::sim::Scenario {
        net,
        demand: DemandProfile {
            interval_hours: 0.25,
            eligible_fraction: 0.0,
            entries: vec![
                DemandEntry { origin: LinkId(0), class: ClassId(0), flows: vec![1800.0, 2400.0] },
                DemandEntry { origin: LinkId(0), class: ClassId(1), flows: vec![200.0, 300.0] },
            ],
        },
        dt_hours: 10.0 / 3600.0,
        steps: 360,
        initial_densities: Vec::new(),
        offramp_splits: Vec::new(),
        gate_shares: Vec::new(),
    }
}

#[test]
fn totals_are_the_exact_sum_of_the_two_lane_groups() {
    let out = Simulator::new(two_lane_corridor()).unwrap().run(&SimConfig::default()).unwrap();
    let m = compute_metrics(&out, &two_lane_corridor().net, 45.0);
    assert!(m.managed.vht > 0.0, "managed lanes saw traffic");
    let total = m.total();
    assert_eq!(total.vmt, m.gp.vmt + m.managed.vmt);
    assert_eq!(total.vht, m.gp.vht + m.managed.vht);
    assert_eq!(total.delay, m.gp.delay + m.managed.delay);
}

/// Metrics accumulate per step, so a run split at any step boundary sums
/// to the whole run.
#[test]
fn metrics_add_over_time_partitions() {
    let scn = two_lane_corridor();
    let out = Simulator::new(scn.clone()).unwrap().run(&SimConfig::default()).unwrap();
    let whole = compute_metrics(&out, &scn.net, 45.0);

    let cut = 147;
    let slice = |from: usize, to: usize| {
        let mut part = out.clone();
        part.steps = to - from;
        part.density = out.density.iter().map(|r| r[from..to].to_vec()).collect();
        part.speed = out.speed.iter().map(|r| r[from..to].to_vec()).collect();
        part.flow = out.flow.iter().map(|r| r[from..to].to_vec()).collect();
        compute_metrics(&part, &scn.net, 45.0)
    };
    let head = slice(0, cut);
    let tail = slice(cut, out.steps);

    for (a, b) in [
        (whole.total().vmt, head.total().vmt + tail.total().vmt),
        (whole.total().vht, head.total().vht + tail.total().vht),
        (whole.total().delay, head.total().delay + tail.total().delay),
    ] {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn recomputation_from_exports_matches_the_in_memory_summary() {
    let scn = two_lane_corridor();
    let out = Simulator::new(scn.clone()).unwrap().run(&SimConfig::default()).unwrap();
    let direct = compute_metrics(&out, &scn.net, 45.0);

    let dir = tempfile::tempdir().unwrap();
    write_contours(dir.path(), &out, &scn.net).unwrap();
    write_links(dir.path(), &scn.net).unwrap();
    write_run_record(dir.path(), &RunRecord::of(&out)).unwrap();
    let redone = metrics_from_dir(dir.path(), 45.0).unwrap();

    assert_eq!(render_metrics(&direct), render_metrics(&redone));
}

#[test]
fn the_report_lists_gp_managed_and_total_rows() {
    let scn = two_lane_corridor();
    let out = Simulator::new(scn.clone()).unwrap().run(&SimConfig::default()).unwrap();
    let text = render_metrics(&compute_metrics(&out, &scn.net, 45.0));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("group,vmt,vht,delay"));
    let rows: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["gp", "managed", "total"]);
}
