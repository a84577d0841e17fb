//! Knowledge distillation with pluggable data augmentation.
//!
//! The crate bundles a small double-precision CNN engine, augmentation
//! kernels and the KD batch-composition rule, the teacher-mean-probability
//! stddev metric for ranking augmentation schemes, entropy-based picking of
//! CutMix samples, and a finite-world lab that checks how sample correlation
//! inflates the variance of the empirical distilled risk.

pub mod augment;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod proposition;
pub mod rng;
pub mod tensor;

pub use error::{KdError, Result};
pub use tensor::Tensor;
