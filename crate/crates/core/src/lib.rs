//! Split-parallel mini-batch GNN training on simulated devices.
//!
//! The pipeline per iteration: sample a mini-batch ([`sampler`]), split it into
//! per-device local splits using an offline partition ([`partition`],
//! [`scheduler`]), load the missing input features, and run forward/backward
//! cooperatively across the devices ([`engine`]). Transfer volumes and edge
//! counts are metered in [`metrics`].

pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod ids;
pub mod metrics;
pub mod partition;
pub mod sampler;
pub mod scheduler;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::Graph;
pub use ids::{DeviceId, LayerIndex, VertexId};
pub use partition::{CacheState, PartitionMap};
pub use sampler::MiniBatchSample;
pub use tensor::Matrix;
