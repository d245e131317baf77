//! First-order macroscopic traffic model for freeway corridors with managed
//! lanes (HOV/HOT), plus a calibration engine that recovers offramp split
//! ratios from measured offramp flows.
//!
//! The crate is organized along the pipeline:
//!
//! * [`net`]: network description (vehicle classes, links, nodes, splits) and
//!   static validation, including gate-segment derivation for corridors whose
//!   managed lane is accessible only at gates.
//! * [`link`]: per-link cell dynamics with a backwards-lambda fundamental
//!   diagram, a hysteretic congestion metastate, and the friction effect a
//!   congested general-purpose lane exerts on the adjacent managed lane.
//! * [`node`]: junction flows under priority-based supply allocation with
//!   per-movement FIFO relaxation, and completion of partially defined split
//!   ratios by demand-supply balancing.
//! * [`sim`]: the step loop (vertical-queue origins, gate class switching,
//!   split completion, node flows, density update) and its recorded output.
//! * [`calib`]: offramp split-ratio identification by bisection and the outer
//!   calibration loop over full simulation runs.
//!
//! Unit conventions, used everywhere unless a signature says otherwise:
//! densities are veh/mile aggregated over the whole lane group, flows cross
//! the API boundary in veh/hour, speeds are mph, lengths are miles, and times
//! are hours. Fundamental-diagram capacity and jam density are lane-group
//! totals (per-lane values scaled by the lane count belong to file loaders).
//! All computations are sequential and deterministic: identical inputs give
//! bit-identical outputs.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod calib;
pub mod link;
pub mod net;
pub mod node;
pub mod sim;

#[cfg(feature = "fixtures")]
pub mod fixtures;
