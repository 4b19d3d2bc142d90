//! Softmax kernel interpolation for Gaussian processes with derivative
//! observations.
//!
//! Each datapoint is mapped onto `m` learned interpolation points through
//! softmax weights with per-point temperature vectors; values and gradients
//! share one `m × m` kernel, so training and prediction cost `O(n d m²)`.

pub mod datasets;
pub mod error;
pub mod exact;
pub mod interp;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod transform;

pub use datasets::{InputTransform, LabeledDerivDataset, NormOptions, NormTransform, TestFunction};
pub use error::{Error, Result};
pub use exact::GpwdNoise;
pub use interp::{InterpBlockMatrix, InterpField, Observations};
pub use kernels::KernelParams;
pub use metrics::{Evaluation, MetricSet};
pub use model::{DsoftkiParams, FittedModel, ParamGroup, Prediction};
pub use trainer::{TrainConfig, TrainOutcome};
