//! Per-link cell dynamics.
//!
//! Each link is a single cell holding one density per vehicle class. The
//! functions here map densities to boundary flows under a backwards-lambda
//! fundamental diagram: [`compute_demand`] is how much the cell can send
//! downstream, [`compute_supply`] how much it can accept, and
//! [`update_metastate`] tracks which branch of the diagram applies inside the
//! band where both are feasible. [`apply_friction`] degrades a managed link's
//! diagram when the adjacent general-purpose lanes are slow.

use alloc::vec;
use alloc::vec::Vec;

use crate::net::FundamentalDiagram;

/// Densities below this are treated as an empty cell when deriving speeds.
pub const DENSITY_FLOOR: f64 = 1e-9;

/// Dynamic state of one link: per-class densities plus the congestion
/// metastate.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkState {
    /// Per-class density, veh/mi over the whole lane group.
    pub densities: Vec<f64>,
    /// Which branch of the fundamental diagram governs receiving while the
    /// total density sits between the two critical densities. Starts
    /// uncongested.
    pub congested: bool,
}

impl LinkState {
    pub fn new(class_count: usize) -> Self {
        LinkState { densities: vec![0.0; class_count], congested: false }
    }

    pub fn total_density(&self) -> f64 {
        self.densities.iter().sum()
    }
}

/// Total a cell can send over its downstream boundary, veh/h.
pub fn sending_total(fd: &FundamentalDiagram, total_density: f64) -> f64 {
    (fd.free_flow * total_density).min(fd.capacity)
}

/// Per-class demand written into `out`. Classes share the boundary in
/// proportion to their densities: below capacity everyone sends at free-flow
/// speed, at capacity the limited total is split exactly proportionally, so
/// the per-class values always sum to [`sending_total`].
pub fn compute_demand_into(fd: &FundamentalDiagram, densities: &[f64], out: &mut [f64]) {
    debug_assert_eq!(densities.len(), out.len());
    let total: f64 = densities.iter().sum();
    if fd.free_flow * total <= fd.capacity {
        for (o, &rho) in out.iter_mut().zip(densities) {
            *o = fd.free_flow * rho;
        }
    } else {
        // total > 0 here, so the share is well defined.
        let rate = fd.capacity / total;
        for (o, &rho) in out.iter_mut().zip(densities) {
            *o = rate * rho;
        }
    }
}

/// Allocating variant of [`compute_demand_into`].
pub fn compute_demand(fd: &FundamentalDiagram, densities: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; densities.len()];
    compute_demand_into(fd, densities, &mut out);
    out
}

/// Flow a cell can accept over its upstream boundary, veh/h. Uncongested
/// cells accept capacity outright; congested cells accept what the queue
/// discharge wave clears, never more than capacity and never negative.
pub fn compute_supply(fd: &FundamentalDiagram, total_density: f64, congested: bool) -> f64 {
    if congested {
        (fd.wave * (fd.jam_density - total_density)).clamp(0.0, fd.capacity)
    } else {
        fd.capacity
    }
}

/// Advance the congestion metastate after a density update. Below the low
/// critical density the cell is definitely uncongested, above the high one
/// definitely congested; in between the previous state persists, which is
/// what makes emptying a queue behave differently from filling one.
pub fn update_metastate(fd: &FundamentalDiagram, total_density: f64, congested: bool) -> bool {
    if total_density <= fd.low_critical_density() {
        false
    } else if total_density > fd.high_critical_density() {
        true
    } else {
        congested
    }
}

/// Degrade a managed link's fundamental diagram in response to slow adjacent
/// general-purpose traffic. The speed deficit `max(0, v_f - gp_speed)` scaled
/// by `sigma` comes off the free-flow speed, and capacity drops in the same
/// ratio so the critical density is preserved. When the effect vanishes
/// (`sigma` is zero or the GP lanes are at least as fast) the diagram is
/// returned bit-for-bit unchanged.
pub fn apply_friction(fd: &FundamentalDiagram, sigma: f64, gp_speed: f64) -> FundamentalDiagram {
    let deficit = (fd.free_flow - gp_speed).max(0.0);
    if sigma * deficit == 0.0 {
        return *fd;
    }
    let slowed = fd.free_flow - sigma * deficit;
    FundamentalDiagram {
        capacity: slowed * (fd.capacity / fd.free_flow),
        free_flow: slowed,
        wave: fd.wave,
        jam_density: fd.jam_density,
    }
}

/// Space-mean speed implied by a realized outflow, mph. Empty cells move at
/// free flow; otherwise flow over density, capped at free flow so numerical
/// residue never reports a speed above it.
pub fn link_speed(fd: &FundamentalDiagram, outflow: f64, total_density: f64) -> f64 {
    if total_density < DENSITY_FLOOR {
        fd.free_flow
    } else {
        (outflow / total_density).min(fd.free_flow)
    }
}
