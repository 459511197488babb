//! Uplift estimation with causal knowledge attached to a graph convolutional
//! S-learner.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`dataset`]: synthetic randomized-trial generator, CSV ingestion, splits.
//! * [`teacher`]: a small gradient boosted tree regressor that turns the hard
//!   outcome into soft labels.
//! * [`cate`]: one cross-fitted double machine learning head per feature,
//!   producing per-sample causal weights.
//! * [`structure`]: linear-Gaussian BIC scoring and hill climbing over DAGs,
//!   plus the normalized adjacency consumed by the GCN.
//! * [`gcn`]: the graph convolutional S-learner and its uplift predictions.
//! * [`eval`]: MSE, absolute ITE error, uplift curves and AUUC.
//! * [`pipeline`]: config-driven orchestration with file artifacts.

pub mod cate;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gcn;
mod linalg;
pub mod pipeline;
pub mod rng;
pub mod structure;
pub mod teacher;

pub use error::{Result, UpliftError};
