//! Edge-cloud split inference for sequential CNNs.
//!
//! Channel-pruning search with a DDPG agent, per-layer latency profiling,
//! greedy split-point planning and a two-daemon runtime that executes the
//! front layers on the edge and the rest on the server.

pub mod agent;
pub mod error;
pub mod mlp;
pub mod model;
pub mod planner;
pub mod profile;
pub mod prune;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelGraph, ValidationSet};
pub use tensor::Tensor;
