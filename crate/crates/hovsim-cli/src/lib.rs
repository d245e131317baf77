//! File formats, exports, and reporting around the corridor simulator.

pub mod export;
pub mod metrics;
pub mod report;
pub mod scenario;
