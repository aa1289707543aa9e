//! Deterministic discrete-event simulation of processes stamping events with
//! PWC clocks while their physical clocks wander within a skew bound.
//!
//! A run is fully determined by its [`SimParams`] (including the seed).

mod engine;
pub mod params;
pub mod report;
pub mod skew;

pub use engine::{pick_destination, run, run_summary, HlcStats, SimError, SimResult};
pub use params::{FaultKind, FaultSpec, InitialSkew, ParamError, SimParams, Topology, Traffic};
