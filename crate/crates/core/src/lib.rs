//! Knowledge-distillation workbench: a small reverse-mode autodiff engine,
//! capacity-parameterized MLP classifiers, the Hinton KD / KD* / norm-MSE /
//! spherical KD losses, deterministic datasets, SGD training and the
//! confidence and logit-decomposition diagnostics.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod idx;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, SyntheticSpec};
pub use error::{Error, Result};
pub use losses::{LossConfig, LossValue, Method};
pub use metrics::{ConfidenceStats, GapReport};
pub use model::{Mlp, MlpConfig};
pub use tape::{Gradient, Tape, Var};
pub use tensor::Tensor;
pub use training::{EpochRow, RunRecord, SgdConfig};

/// Default normalization guard for logit normalization.
pub const NORM_EPS: f64 = 1e-12;
