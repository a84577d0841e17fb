//! Minimal neural-network engine: layers with reverse-mode gradients,
//! losses, SGD with momentum and the multi-step learning-rate schedule.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;

pub use layers::{Layer, LayerSpec, Param};
pub use loss::{
    batch_cross_entropy, clamp_count, cross_entropy, kl_divergence, softmax_cross_entropy,
    softmax_rows, softmax_temp, LOG_EPS,
};
pub use model::{CnnSpec, Model};
pub use optim::{lr_at, sgd_step, ScheduleConfig, Sgd};
