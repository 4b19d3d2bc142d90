//! The DSoftKI model: factorized kernel, stabilized objective, posterior fit
//! and prediction.

mod archive;
mod fit;
mod hutchinson;
mod lowrank;
mod objective;
mod params;

pub use archive::{from_json, load_model, save_model, to_json, ARCHIVE_VERSION};
pub use fit::{
    fit, omega_diagnostic, predict, predict_covariance, predict_normalized, FitOptions,
    FittedModel, Prediction,
};
pub use hutchinson::{
    hutchinson_pseudoloss, sample_probes, DsoftkiOperator, Pseudoloss, PRECONDITIONER_RANK,
};
pub use lowrank::{build_factor, lowrank_logpdf, LowRankFactor, LowRankGaussian};
pub use objective::{
    lowrank_objective_value, pseudoloss_objective_value, stabilized_objective, ObjectiveOptions,
    ObjectiveValue,
};
pub use params::{DsoftkiParams, ParamGroup, ParamLayout};
