//! The stabilized training objective: exact low-rank log-likelihood when the
//! factorizations succeed, Hutchinson pseudoloss otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::interp::Observations;
use crate::linalg::{CgOptions, DEFAULT_JITTER_SCHEDULE};

use super::hutchinson::pseudoloss_objective;
use super::lowrank::lowrank_objective;
use super::params::DsoftkiParams;

/// Settings shared by every objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveOptions {
    pub observations: Observations,
    pub jitter_schedule: Vec<f64>,
    pub num_probes: usize,
    pub probe_seed: u64,
    pub cg: CgOptions,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            observations: Observations::ValuesAndGradients,
            jitter_schedule: DEFAULT_JITTER_SCHEDULE.to_vec(),
            num_probes: 10,
            probe_seed: 0,
            cg: CgOptions::default(),
        }
    }
}

/// Objective value with its gradient over the unconstrained parameters.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Set when the pseudoloss replaced the exact log-likelihood.
    pub fallback: bool,
    /// Jitter added to `K_zz`; zero on the fallback path.
    pub jitter: f64,
}

/// Exact low-rank log-likelihood and its gradient, without any fallback.
pub fn lowrank_objective_value(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    opts: &ObjectiveOptions,
) -> Result<ObjectiveValue> {
    check_batch(x, ytil, params, opts.observations)?;
    let ev = lowrank_objective(x, ytil, params, opts.observations, &opts.jitter_schedule)?;
    Ok(ObjectiveValue {
        value: ev.value,
        gradient: params.flatten_gradient(&ev.gradient),
        fallback: false,
        jitter: ev.jitter_used,
    })
}

/// Hutchinson pseudoloss and its gradient estimate, without trying the exact path.
pub fn pseudoloss_objective_value(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    opts: &ObjectiveOptions,
) -> Result<ObjectiveValue> {
    check_batch(x, ytil, params, opts.observations)?;
    let ev = pseudoloss_objective(
        x,
        ytil,
        params,
        opts.observations,
        opts.num_probes,
        opts.probe_seed,
        opts.cg,
    )?;
    Ok(ObjectiveValue {
        value: ev.value,
        gradient: params.flatten_gradient(&ev.gradient),
        fallback: true,
        jitter: 0.0,
    })
}

/// Exact path first; the pseudoloss takes over on factorization failure.
pub fn stabilized_objective(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    opts: &ObjectiveOptions,
) -> Result<ObjectiveValue> {
    check_batch(x, ytil, params, opts.observations)?;
    let primary = match lowrank_objective_value(x, ytil, params, opts) {
        Ok(v) if v.value.is_finite() && v.gradient.iter().all(|g| g.is_finite()) => return Ok(v),
        Ok(_) => "non-finite low-rank objective".to_string(),
        Err(e @ Error::FactorizationFailed { .. }) => e.to_string(),
        Err(e) => return Err(e),
    };
    log::debug!("low-rank objective unavailable ({primary}); using pseudoloss");
    match pseudoloss_objective_value(x, ytil, params, opts) {
        Ok(v) if v.value.is_finite() => Ok(v),
        Ok(_) => Err(Error::Unrecoverable(format!(
            "{primary}; pseudoloss is not finite"
        ))),
        Err(e) => Err(Error::Unrecoverable(format!("{primary}; pseudoloss: {e}"))),
    }
}

fn check_batch(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    observations: Observations,
) -> Result<()> {
    if x.ncols() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns, model dimension is {}",
            x.ncols(),
            params.dim()
        )));
    }
    let expected = x.nrows() * observations.rows_per_point(params.dim());
    if ytil.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {expected} rows",
            ytil.len()
        )));
    }
    Ok(())
}
