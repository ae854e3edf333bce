//! Deterministic simulator for decentralized multi-server training.
//!
//! Servers hold private data shards, train a small MLP locally, and mix their
//! parameters with neighbors on a fixed communication graph. Mixing weights are
//! either static (simple, Metropolis) or adaptive: each server's weight is
//! derived from how well its model does on its neighbors' data. FedAvg and
//! centralized training are included as reference baselines.

pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod weighting;

pub use error::{Error, Result};
