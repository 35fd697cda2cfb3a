//! Multi-scale spectrum sensing for dense multi-cell cognitive radio networks.
//!
//! Secondary users (SUs) estimate the local primary-user (PU) occupancy of
//! their cell, fuse the estimates up an aggregation tree matched to the
//! interference structure, and use the resulting multi-scale view of the
//! network to pick their traffic in a decentralized way.
//!
//! Module map:
//!
//! * [`topology`]: cell layouts, blockages, line of sight and the INR matrix.
//! * [`dynamics`]: two-state Markov PU occupancy and SU populations.
//! * [`sensing`]: per-cell Bayesian occupancy filter.
//! * [`hierarchy`]: aggregation trees (interference-matched and random).
//! * [`aggregation`]: the per-frame hierarchical exchange protocol.
//! * [`inference`]: delay-compensated beliefs and interference estimates.
//! * [`control`]: throughput bound, utility, optimal traffic, baselines.
//! * [`harness`]: frame loop, fading evaluation and Monte Carlo sweeps.

pub mod aggregation;
#[cfg(feature = "cli")]
pub mod cli;
pub mod control;
pub mod dynamics;
pub mod harness;
pub mod hierarchy;
pub mod inference;
pub mod rng;
pub mod sensing;
pub mod topology;
pub mod validate;

pub use aggregation::{AggregationError, MultiScaleEstimate, NodeBuffers};
pub use control::{ControlParams, Population};
pub use dynamics::{OccupancyModel, OccupancyState, PopulationMode, SuPopulation};
pub use harness::{ExperimentConfig, FrameMetrics, SweepResult};
pub use hierarchy::{AggregationTree, Cluster};
pub use inference::{BeliefTable, DelayCompensatedWeights};
pub use sensing::{LocalBelief, SensorModel};
pub use topology::{Blockage, InterferenceMatrix, NetworkTopology, PathlossParams, Point};

/// Converts a dB value to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear value to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}
