//! JSON reports written by the commands.

use dsoftki_core::{Evaluation, MetricSet};
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::CliError;

/// Bumped whenever a field of a report changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

/// One set of metrics; `gradient_nll` is absent when the model has no
/// gradient noise term (exact value-only GP).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub value_rmse: f64,
    pub gradient_rmse: f64,
    pub nll: f64,
    pub gradient_nll: Option<f64>,
}

impl From<MetricSet> for Metrics {
    fn from(m: MetricSet) -> Self {
        Metrics {
            value_rmse: m.value_rmse,
            gradient_rmse: m.gradient_rmse,
            nll: m.nll,
            gradient_nll: m.gradient_nll.is_finite().then_some(m.gradient_nll),
        }
    }
}

impl Metrics {
    fn all_finite(&self) -> bool {
        [self.value_rmse, self.gradient_rmse, self.nll]
            .iter()
            .chain(self.gradient_nll.as_ref())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub command: String,
    pub mode: Mode,
    pub seed: u64,
    /// Echo of the full run configuration; absent for `eval`.
    pub config: Option<RunConfig>,
    /// Model archive scored by `eval`.
    pub model: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    /// Raw (de-normalized) units.
    pub metrics: Metrics,
    /// Units the model was trained in.
    pub normalized_metrics: Metrics,
    pub fallbacks: usize,
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    pub fn new(command: &str, mode: Mode, seed: u64, eval: &Evaluation) -> Self {
        MetricsReport {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            mode,
            seed,
            config: None,
            model: None,
            n_train: 0,
            n_test: eval.n_test,
            metrics: eval.raw.into(),
            normalized_metrics: eval.normalized.into(),
            fallbacks: 0,
            wall_clock_seconds: 0.0,
        }
    }

    /// Non-finite metrics mean the numerics broke down somewhere.
    pub fn check_finite(&self) -> Result<(), CliError> {
        if self.metrics.all_finite() && self.normalized_metrics.all_finite() {
            Ok(())
        } else {
            Err(CliError::Numerical(format!(
                "non-finite test metrics: {:?}",
                self.metrics
            )))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Paired per-point vs shared-temperature runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub per_point: MetricsReport,
    pub shared: MetricsReport,
    /// Shared minus per-point, raw units; positive means sharing hurts.
    pub delta_rmse: f64,
    pub delta_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckOutput {
    pub schema_version: u32,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub step: f64,
    pub threshold: f64,
    /// Relative error per parameter group.
    pub groups: Vec<(String, f64)>,
    pub max_error: f64,
    pub pass: bool,
}
