//! Self-influence scoring of training examples and the tooling built on it:
//! noise detection, stability metrics, threshold filtering and bandit-driven
//! curriculum training, all for small fully connected classifiers.

pub mod autocl;
pub mod diffcore;
pub mod error;
pub mod experiment;
pub mod hashing;
pub mod influence;
pub mod ranking;
pub mod stability;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
