//! Minibatched Adam over the stabilized objective, gradient checking and
//! epoch telemetry.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDerivDataset, NormTransform};
use crate::error::{Error, Result};
use crate::exact::{exact_gp_mll, exact_gpwd_mll, exact_gp_posterior, exact_gpwd_posterior, GpwdNoise};
use crate::interp::Observations;
use crate::kernels::KernelParams;
use crate::linalg::{CgOptions, DEFAULT_JITTER_SCHEDULE};
use crate::metrics::{evaluate, gaussian_nll, gradient_rmse, rmse, Evaluation, MetricSet};
use crate::model::{
    fit, lowrank_objective_value, stabilized_objective, DsoftkiParams, FitOptions, FittedModel,
    ObjectiveOptions, ParamGroup,
};
use crate::transform::{from_positive, to_positive, KERNEL_FLOOR, NOISE_FLOOR};

/// Initial value-noise variance.
pub const INITIAL_VALUE_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    /// Number of interpolation points.
    pub m: usize,
    /// `β_g² / (d β_v²)` at initialization.
    pub noise_ratio: f64,
    pub num_probes: usize,
    pub seed: u64,
    pub shared_temperature: bool,
    /// Fit values only (SoftKI mode).
    pub value_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            epochs: 50,
            base_lr: 0.01,
            m: 512,
            noise_ratio: 1.0,
            num_probes: 10,
            seed: 0,
            shared_temperature: false,
            value_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.m == 0 {
            return Err(Error::InvalidConfig(
                "batch size and m must be positive".into(),
            ));
        }
        if !(self.base_lr > 0.0) || !(self.noise_ratio > 0.0) {
            return Err(Error::InvalidConfig(
                "base learning rate and noise ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn observations(&self) -> Observations {
        if self.value_only {
            Observations::ValuesOnly
        } else {
            Observations::ValuesAndGradients
        }
    }

    /// `D` in `Δ_eff = D Δ_base`: one for value-only fitting, `r + 1` otherwise.
    pub fn method_dims(&self) -> f64 {
        if self.value_only {
            1.0
        } else {
            self.noise_ratio + 1.0
        }
    }
}

pub fn effective_lr(method_dims: f64, base_lr: f64) -> f64 {
    assert!(method_dims >= 1.0, "method dimension must be at least one");
    method_dims * base_lr
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: DVector<f64>,
    pub v: DVector<f64>,
    pub step: u64,
}

impl OptState {
    pub fn new(len: usize) -> Self {
        OptState {
            m: DVector::zeros(len),
            v: DVector::zeros(len),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam ascent step.
pub fn adam_step(
    params: &mut DVector<f64>,
    grads: &DVector<f64>,
    state: &mut OptState,
    lr: f64,
    cfg: AdamConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] += lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Probe seed for one objective evaluation.
pub fn probe_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    // splitmix64 finalizer over the packed coordinates
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (batch as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Labels matching the row layout of `observations`.
pub fn batch_labels(ds: &LabeledDerivDataset, observations: Observations) -> DVector<f64> {
    match observations {
        Observations::ValuesAndGradients => ds.stacked_labels(),
        Observations::ValuesOnly => ds.y.clone(),
    }
}

/// Objective and gradient, both averaged per label row.
pub fn objective_gradient(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    opts: &ObjectiveOptions,
) -> Result<(f64, DVector<f64>, bool, f64)> {
    let v = stabilized_objective(x, ytil, params, opts)?;
    let p = ytil.len().max(1) as f64;
    Ok((v.value / p, v.gradient / p, v.fallback, v.jitter))
}

/// Worst relative finite-difference error per parameter group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub groups: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn error(&self, group: ParamGroup) -> Option<f64> {
        self.groups
            .iter()
            .find(|(g, _)| g == group.name())
            .map(|(_, e)| *e)
    }
}

/// Central differences of the exact low-rank objective, coordinate by
/// coordinate, against its analytic gradient.
///
/// A group's error is its largest absolute discrepancy divided by its
/// largest finite-difference magnitude (floored at 1e-6 of the overall
/// largest, so that groups with vanishing gradient do not divide by zero).
pub fn grad_check(
    params: &DsoftkiParams,
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    h: f64,
    observations: Observations,
) -> Result<GradCheckReport> {
    let opts = ObjectiveOptions {
        observations,
        ..ObjectiveOptions::default()
    };
    let analytic = lowrank_objective_value(x, ytil, params, &opts)?.gradient;
    let raw = params.to_unconstrained();
    let mut fd = DVector::zeros(raw.len());
    for i in 0..raw.len() {
        let mut up = raw.clone();
        up[i] += h;
        let mut dn = raw.clone();
        dn[i] -= h;
        let fu = lowrank_objective_value(x, ytil, &params.with_unconstrained(&up), &opts)?.value;
        let fdn = lowrank_objective_value(x, ytil, &params.with_unconstrained(&dn), &opts)?.value;
        fd[i] = (fu - fdn) / (2.0 * h);
    }
    let global = fd.amax();
    let layout = params.layout();
    let groups = layout
        .groups()
        .filter(|(_, r)| !r.is_empty())
        .map(|(g, r)| {
            let mut diff: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in r {
                diff = diff.max((fd[i] - analytic[i]).abs());
                scale = scale.max(fd[i].abs());
            }
            let denom = scale.max(1e-6 * global).max(f64::MIN_POSITIVE);
            (g.name().to_string(), diff / denom)
        })
        .collect();
    Ok(GradCheckReport { step: h, groups })
}

/// One telemetry row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_objective: f64,
    pub fallback_count: usize,
    pub max_jitter: f64,
    pub seconds: f64,
    pub test: Option<MetricSet>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub epochs: Vec<EpochRecord>,
}

impl Telemetry {
    /// CSV with one row per epoch; the wall-clock column can be omitted for
    /// reproducibility comparisons.
    pub fn to_csv(&self, with_wall_clock: bool) -> String {
        let mut out = String::from("epoch,mean_objective,fallback_count,max_jitter");
        if with_wall_clock {
            out.push_str(",seconds");
        }
        out.push_str(",test_rmse,test_gradient_rmse,test_nll\n");
        for r in &self.epochs {
            let _ = write!(
                out,
                "{},{},{},{}",
                r.epoch, r.mean_objective, r.fallback_count, r.max_jitter
            );
            if with_wall_clock {
                let _ = write!(out, ",{:.3}", r.seconds);
            }
            match &r.test {
                Some(t) => {
                    let _ = writeln!(out, ",{},{},{}", t.value_rmse, t.gradient_rmse, t.nll);
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }

    pub fn total_fallbacks(&self) -> usize {
        self.epochs.iter().map(|r| r.fallback_count).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FittedModel,
    pub telemetry: Telemetry,
}

/// Data-subset interpolation points, unit temperatures and the configured noise ratio.
pub fn initial_params(train: &LabeledDerivDataset, config: &TrainConfig) -> Result<DsoftkiParams> {
    let (n, d) = (train.len(), train.dim());
    if config.m > n {
        return Err(Error::InvalidConfig(format!(
            "m = {} exceeds the {n} training points available for initialization",
            config.m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut idx = sample(&mut rng, n, config.m).into_vec();
    idx.sort_unstable();
    let z = DMatrix::from_fn(config.m, d, |j, k| train.x[(idx[j], k)]);
    let noise = GpwdNoise::new(
        INITIAL_VALUE_NOISE,
        config.noise_ratio * d as f64 * INITIAL_VALUE_NOISE,
    );
    Ok(DsoftkiParams::initial(z, config.shared_temperature, noise))
}

/// Trains on normalized data and fits the posterior.
///
/// When `test` (raw units) is given, every epoch also refits and records test metrics.
pub fn train(
    train: &LabeledDerivDataset,
    norm: &NormTransform,
    config: &TrainConfig,
    test: Option<&LabeledDerivDataset>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let observations = config.observations();
    let mut params = initial_params(train, config)?;
    let mut raw = params.to_unconstrained();
    let mut state = OptState::new(raw.len());
    let lr = effective_lr(config.method_dims(), config.base_lr);
    let fit_opts = FitOptions {
        observations,
        block_size: config.batch_size,
        ..FitOptions::default()
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut telemetry = Telemetry::default();
    let start = Instant::now();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        let mut fallbacks = 0;
        let mut max_jitter: f64 = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.select(chunk);
            let ytil = batch_labels(&batch, observations);
            let opts = ObjectiveOptions {
                observations,
                jitter_schedule: DEFAULT_JITTER_SCHEDULE.to_vec(),
                num_probes: config.num_probes,
                probe_seed: probe_seed(config.seed, epoch, b),
                cg: CgOptions::default(),
            };
            let (value, grad, fallback, jitter) =
                objective_gradient(&batch.x, &ytil, &params, &opts)?;
            total += value;
            batches += 1;
            fallbacks += usize::from(fallback);
            max_jitter = max_jitter.max(jitter);
            adam_step(&mut raw, &grad, &mut state, lr, AdamConfig::default());
            params = params.with_unconstrained(&raw);
        }
        let test_metrics = match test {
            Some(t) => {
                let model = fit(&train.x, &batch_labels(train, observations), &params, norm.clone(), &fit_opts)?;
                Some(evaluate(&model, t).normalized)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_objective: total / batches as f64,
            fallback_count: fallbacks,
            max_jitter,
            seconds: start.elapsed().as_secs_f64(),
            test: test_metrics,
        };
        log::info!(
            "epoch {} objective {:.6} fallbacks {}",
            record.epoch,
            record.mean_objective,
            record.fallback_count
        );
        telemetry.epochs.push(record);
    }
    let model = fit(
        &train.x,
        &batch_labels(train, observations),
        &params,
        norm.clone(),
        &fit_opts,
    )?;
    Ok(TrainOutcome { model, telemetry })
}

/// Hyperparameters of a dense exact GP or GPwD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactHyper {
    pub kernel: KernelParams,
    pub noise: GpwdNoise,
    pub with_gradients: bool,
}

impl ExactHyper {
    fn to_raw(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self
            .kernel
            .lengthscales
            .iter()
            .map(|l| from_positive(*l, KERNEL_FLOOR))
            .collect();
        v.push(from_positive(self.kernel.scale, KERNEL_FLOOR));
        v.push(from_positive(self.noise.value, NOISE_FLOOR));
        v.push(from_positive(self.noise.gradient, NOISE_FLOOR));
        DVector::from_vec(v)
    }

    fn with_raw(&self, raw: &DVector<f64>) -> Self {
        let d = self.kernel.lengthscales.len();
        ExactHyper {
            kernel: KernelParams {
                lengthscales: (0..d).map(|k| to_positive(raw[k], KERNEL_FLOOR)).collect(),
                scale: to_positive(raw[d], KERNEL_FLOOR),
            },
            noise: GpwdNoise {
                value: to_positive(raw[d + 1], NOISE_FLOOR),
                gradient: to_positive(raw[d + 2], NOISE_FLOOR),
            },
            with_gradients: self.with_gradients,
        }
    }

    fn mll(&self, train: &LabeledDerivDataset) -> Result<f64> {
        if self.with_gradients {
            exact_gpwd_mll(&train.x, &train.stacked_labels(), &self.kernel, self.noise)
        } else {
            exact_gp_mll(&train.x, &train.y, &self.kernel, self.noise.value)
        }
    }
}

/// Exact GP (or GPwD) trained by full-batch Adam on central-difference gradients.
#[derive(Debug, Clone)]
pub struct ExactOutcome {
    pub hyper: ExactHyper,
    pub telemetry: Telemetry,
}

/// Full-batch training of the dense exact models on normalized data.
pub fn train_exact(
    train: &LabeledDerivDataset,
    config: &TrainConfig,
    with_gradients: bool,
) -> Result<ExactOutcome> {
    let d = train.dim();
    let mut hyper = ExactHyper {
        kernel: KernelParams::isotropic(d, 1.0, 1.0),
        noise: GpwdNoise::new(
            INITIAL_VALUE_NOISE,
            config.noise_ratio * d as f64 * INITIAL_VALUE_NOISE,
        ),
        with_gradients,
    };
    let mut raw = hyper.to_raw();
    let mut state = OptState::new(raw.len());
    let dims = if with_gradients { config.noise_ratio + 1.0 } else { 1.0 };
    let lr = effective_lr(dims, config.base_lr);
    let p = train.len() * if with_gradients { d + 1 } else { 1 };
    let h = 1e-5;
    let mut telemetry = Telemetry::default();
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let value = hyper.mll(train)? / p as f64;
        let mut grad = DVector::zeros(raw.len());
        for i in 0..raw.len() {
            let mut up = raw.clone();
            up[i] += h;
            let mut dn = raw.clone();
            dn[i] -= h;
            let fu = hyper.with_raw(&up).mll(train)?;
            let fd = hyper.with_raw(&dn).mll(train)?;
            grad[i] = (fu - fd) / (2.0 * h * p as f64);
        }
        adam_step(&mut raw, &grad, &mut state, lr, AdamConfig::default());
        hyper = hyper.with_raw(&raw);
        telemetry.epochs.push(EpochRecord {
            epoch: epoch + 1,
            mean_objective: value,
            fallback_count: 0,
            max_jitter: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            test: None,
        });
    }
    Ok(ExactOutcome { hyper, telemetry })
}

/// Scores an exact model trained on normalized `train` against raw `test`.
pub fn evaluate_exact(
    hyper: &ExactHyper,
    train: &LabeledDerivDataset,
    norm: &NormTransform,
    test: &LabeledDerivDataset,
) -> Result<Evaluation> {
    let tn = norm.apply(test);
    let (n, d) = (tn.len(), tn.dim());
    let q = d + 1;
    // Value and gradient posterior follow from the joint kernel in both modes.
    let (mean, cov) = if hyper.with_gradients {
        exact_gpwd_posterior(&train.x, &train.stacked_labels(), &hyper.kernel, hyper.noise, &tn.x)?
    } else {
        let (m, c) = exact_gp_posterior(&train.x, &train.y, &hyper.kernel, hyper.noise.value, &tn.x)?;
        let mut mean = DVector::zeros(n * q);
        let mut cov = DMatrix::zeros(n * q, n * q);
        for i in 0..n {
            mean[i * q] = m[i];
            cov[(i * q, i * q)] = c[(i, i)];
        }
        (mean, cov)
    };
    let values = DVector::from_fn(n, |i, _| mean[i * q]);
    let grads = DMatrix::from_fn(n, d, |i, k| mean[i * q + 1 + k]);
    let normalized = MetricSet {
        value_rmse: rmse(&values, &tn.y),
        gradient_rmse: gradient_rmse(&grads, &tn.dy),
        nll: gaussian_nll(
            values.as_slice(),
            &(0..n).map(|i| cov[(i * q, i * q)].max(0.0) + hyper.noise.value).collect::<Vec<_>>(),
            tn.y.as_slice(),
        ),
        gradient_nll: f64::NAN,
    };
    let raw_values = values.map(|v| norm.invert_value(v));
    let raw_grads = DMatrix::from_fn(n, d, |i, k| norm.invert_gradient(grads[(i, k)], k));
    let raw = MetricSet {
        value_rmse: rmse(&raw_values, &test.y),
        gradient_rmse: gradient_rmse(&raw_grads, &test.dy),
        nll: gaussian_nll(
            raw_values.as_slice(),
            &(0..n)
                .map(|i| norm.invert_value_variance(cov[(i * q, i * q)].max(0.0) + hyper.noise.value))
                .collect::<Vec<_>>(),
            test.y.as_slice(),
        ),
        gradient_nll: f64::NAN,
    };
    Ok(Evaluation {
        raw,
        normalized,
        n_test: n,
    })
}
