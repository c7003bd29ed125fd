//! Federated AdamW laboratory.
//!
//! The crate is organised bottom-up:
//!
//! - [`params`]: flat parameter vectors, block partitions, block means and
//!   replayable random streams.
//! - [`optim`]: single-step update rules (AdamW, the drift-corrected FedAdamW
//!   step, the simplified analysis variant).
//! - [`tasks`]: synthetic objectives with exact gradient oracles and the
//!   Dirichlet label partitioner.
//! - [`partition`]: block partitions built from tensor metadata.
//! - [`federation`]: rounds, client loops, server aggregation and baselines.
//! - [`analysis`]: rate / PAC-Bayes / stationary-covariance calculators and
//!   the drift and second-moment diagnostics.

pub mod analysis;
pub mod error;
pub mod federation;
pub mod optim;
pub mod params;
pub mod partition;
pub mod tasks;

pub use error::{Error, Result};
pub use params::{BlockMeans, BlockPartition, ParamVector, SeedSpec};
