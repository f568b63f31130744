//! Model execution: the single-device reference, the cooperative split
//! engine, and the epoch driver for all modes.

mod cluster;
mod cooperative;
mod model;
mod reference;
mod trainer;

pub use cluster::{scatter_shuffle_forward, Executor, Fabric, Reduce};
pub use cooperative::{Cooperative, DeviceState};
pub use model::{
    GatParams, LayerParams, ModelConfig, ModelKind, ModelParams, SageParams, DEFAULT_HIDDEN,
    DEFAULT_NEGATIVE_SLOPE,
};
pub use reference::{reference_forward, reference_loss_and_grad, Evaluation, ForwardTrace};
pub use trainer::{allreduce_and_step, IterationOutcome, TrainConfig, Trainer};
