//! Black-box configuration tuning for databases and similar systems.
//!
//! The pipeline has five stages: load a parameter manifest, derive value
//! ranges from defaults, sample the configuration space, select the most
//! important parameters with a random forest, and tune the reduced space
//! with random search, Gaussian-process Bayesian optimization, or DDPG.

pub mod environment;
pub mod error;
pub mod feature_select;
pub mod optimizers;
pub mod param_space;
pub mod pipeline;
pub mod sampling;

pub mod stats;

pub use error::{Error, Result};
