//! Packet-sampling intrusion detection.
//!
//! A recurrent classifier reads a flow packet by packet while an
//! actor-critic sampler decides how many packets to skip after each one.
//! The crate covers data loading and synthesis, the numeric substrate, the
//! training loop, non-adaptive baseline samplers, evaluation and a
//! controller that steers the sparsity/accuracy tradeoff at deployment.

pub mod baseline;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod evaluator;
pub mod flow_data;
pub mod model;
pub mod nn;
pub mod rl_sampler;
pub mod rollout;
pub mod steering;
pub mod trainer;

pub use error::{Error, Result};
