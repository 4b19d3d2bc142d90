//! Posterior fit through a streaming QR, prediction, and the ω diagnostic.

use nalgebra::{DMatrix, DVector};

use crate::datasets::NormTransform;
use crate::error::{Error, Result};
use crate::interp::{assemble_interp, Observations};
use crate::kernels::kernel_matrix;
use crate::linalg::{
    check_rank, cholesky_safe, solve_upper, solve_upper_transpose_matrix, HouseholderQr,
    DEFAULT_JITTER_SCHEDULE,
};

use super::params::DsoftkiParams;

/// Settings for [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub observations: Observations,
    /// Datapoints per streamed block.
    pub block_size: usize,
    pub jitter_schedule: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            observations: Observations::ValuesAndGradients,
            block_size: 1024,
            jitter_schedule: DEFAULT_JITTER_SCHEDULE.to_vec(),
        }
    }
}

/// Frozen hyperparameters with the posterior coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub alpha: DVector<f64>,
    pub params: DsoftkiParams,
    pub norm: NormTransform,
    pub observations: Observations,
    /// Upper-triangular `R` with `RᵀR = K + K Σ̃ᵀ Λ⁻¹ Σ̃ K`.
    pub r: DMatrix<f64>,
    /// Jitter added to `K_zz` during the fit.
    pub jitter: f64,
}

impl FittedModel {
    /// `K_zz` as used by the fit, jitter included.
    pub fn gram(&self) -> DMatrix<f64> {
        jittered_gram(&self.params, self.jitter)
    }
}

fn jittered_gram(params: &DsoftkiParams, jitter: f64) -> DMatrix<f64> {
    let mut k = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    k
}

/// Solves `(K + K̂_zx Λ⁻¹ K̂_xz) α = K̂_zx Λ⁻¹ ỹ` by streaming row blocks of
/// `Λ^{-1/2} Σ̃ K` through Householder QR on top of `Lᵀ`.
pub fn fit(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    norm: NormTransform,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let (n, d) = x.shape();
    let q = opts.observations.rows_per_point(d);
    if d != params.dim() || ytil.len() != n * q {
        return Err(Error::DimensionMismatch(format!(
            "fit: {n}x{d} inputs with {} labels for a {}-dimensional model",
            ytil.len(),
            params.dim()
        )));
    }
    let m = params.num_points();
    let gram = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    let kf = cholesky_safe(&gram, &opts.jitter_schedule)?;
    let k = jittered_gram(params, kf.jitter_used);
    let mut r = kf.l.transpose();
    let mut c = DVector::zeros(m);
    let block = opts.block_size.max(1);
    let mut start = 0;
    while start < n {
        let len = block.min(n - start);
        let xb = x.rows(start, len).into_owned();
        let mut kb = assemble_interp(&xb, &params.field, opts.observations).matrix * &k;
        let mut yb = ytil.rows(start * q, len * q).into_owned();
        let noise = params.noise.diagonal(len, q);
        for i in 0..len * q {
            let w = 1.0 / noise[i].sqrt();
            kb.row_mut(i).scale_mut(w);
            yb[i] *= w;
        }
        let mut stacked = DMatrix::zeros(m + len * q, m);
        stacked.rows_mut(0, m).copy_from(&r);
        stacked.rows_mut(m, len * q).copy_from(&kb);
        let mut rhs = DVector::zeros(m + len * q);
        rhs.rows_mut(0, m).copy_from(&c);
        rhs.rows_mut(m, len * q).copy_from(&yb);
        let qr = HouseholderQr::new(stacked);
        r = qr.r();
        c = qr.qt_mul(&rhs);
        start += len;
    }
    check_rank(&r)?;
    let alpha = solve_upper(&r, &c);
    Ok(FittedModel {
        alpha,
        params: params.clone(),
        norm,
        observations: opts.observations,
        r,
        jitter: kf.jitter_used,
    })
}

/// Values, gradients and (optionally) marginal variances at test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: DVector<f64>,
    pub gradients: DMatrix<f64>,
    /// Interleaved `[value, ∂_1, …, ∂_d]` variances per point.
    pub variances: Option<DVector<f64>>,
}

impl Prediction {
    pub fn value_variance(&self, i: usize) -> Option<f64> {
        let q = self.gradients.ncols() + 1;
        self.variances.as_ref().map(|v| v[i * q])
    }
}

/// Test points handled per block during prediction.
const PREDICT_BLOCK: usize = 1024;

/// Prediction in normalized units.
pub fn predict_normalized(
    model: &FittedModel,
    xstar: &DMatrix<f64>,
    want_variance: bool,
) -> Prediction {
    let (n, d) = xstar.shape();
    let q = d + 1;
    let k = model.gram();
    let k_alpha = &k * &model.alpha;
    let mut values = DVector::zeros(n);
    let mut gradients = DMatrix::zeros(n, d);
    let mut variances = want_variance.then(|| DVector::zeros(n * q));
    let mut start = 0;
    while start < n {
        let len = PREDICT_BLOCK.min(n - start);
        let xb = xstar.rows(start, len).into_owned();
        let s = assemble_interp(&xb, &model.params.field, Observations::ValuesAndGradients).matrix;
        let mean = &s * &k_alpha;
        for i in 0..len {
            values[start + i] = mean[i * q];
            for kk in 0..d {
                gradients[(start + i, kk)] = mean[i * q + 1 + kk];
            }
        }
        if let Some(var) = variances.as_mut() {
            // cov = S K Ĉ⁻¹ K Sᵀ = VᵀV with V = R⁻ᵀ K Sᵀ.
            let v = solve_upper_transpose_matrix(&model.r, &(&k * s.transpose()));
            for (j, col) in v.column_iter().enumerate() {
                var[start * q + j] = col.norm_squared();
            }
        }
        start += len;
    }
    Prediction {
        values,
        gradients,
        variances,
    }
}

/// Full interleaved posterior covariance in normalized units; oracle-scale only.
pub fn predict_covariance(model: &FittedModel, xstar: &DMatrix<f64>) -> DMatrix<f64> {
    let k = model.gram();
    let s = assemble_interp(xstar, &model.params.field, Observations::ValuesAndGradients).matrix;
    let v = solve_upper_transpose_matrix(&model.r, &(&k * s.transpose()));
    v.tr_mul(&v)
}

/// Prediction at raw inputs, returned in raw units.
pub fn predict(model: &FittedModel, xstar: &DMatrix<f64>, want_variance: bool) -> Prediction {
    let norm = &model.norm;
    let d = xstar.ncols();
    let q = d + 1;
    let p = predict_normalized(model, &norm.apply_inputs(xstar), want_variance);
    Prediction {
        values: p.values.map(|v| norm.invert_value(v)),
        gradients: DMatrix::from_fn(p.gradients.nrows(), d, |i, k| {
            norm.invert_gradient(p.gradients[(i, k)], k)
        }),
        variances: p.variances.map(|v| {
            DVector::from_fn(v.len(), |r, _| match r % q {
                0 => norm.invert_value_variance(v[r]),
                c => norm.invert_gradient_variance(v[r], c - 1),
            })
        }),
    }
}

/// `ω = Σ̃ᵀ Λ⁻¹ ỹ`: the noise-weighted projection of the labels onto the
/// interpolation points, so that `K_zz ω` is the fit's right-hand side.
pub fn omega_diagnostic(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    observations: Observations,
) -> DVector<f64> {
    let n = x.nrows();
    let q = observations.rows_per_point(params.dim());
    let s = assemble_interp(x, &params.field, observations).matrix;
    let weighted = ytil.component_div(&params.noise.diagonal(n, q));
    s.tr_mul(&weighted)
}
