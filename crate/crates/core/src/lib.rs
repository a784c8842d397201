pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod graph;
pub mod relation;
pub mod masking;
pub mod optim;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod baselines;
pub mod config;
pub mod checkpoint;
pub mod commands;
