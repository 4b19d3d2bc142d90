//! Low-rank factorization of the DSoftKI covariance and its exact log-density.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::interp::{assemble_interp, interp_vjp, Observations};
use crate::kernels::{gram_vjp, kernel_matrix};
use crate::linalg::{cholesky_safe, solve_lower, solve_lower_matrix, SpdFactor};

use super::params::{DsoftkiParams, ParamGradient};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `F = Σ̃ L` together with the stabilization applied to `K_zz`.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    pub f: DMatrix<f64>,
    pub jitter_used: f64,
    pub precision_escalated: bool,
}

/// Gaussian with covariance `F Fᵀ + diag(noise_diag)`.
#[derive(Debug, Clone)]
pub struct LowRankGaussian {
    pub factor: DMatrix<f64>,
    pub noise_diag: DVector<f64>,
}

/// Builds the low-rank factor for the rows of `x`.
pub fn build_factor(
    x: &DMatrix<f64>,
    params: &DsoftkiParams,
    observations: Observations,
    jitter_schedule: &[f64],
) -> Result<LowRankFactor> {
    let s = assemble_interp(x, &params.field, observations);
    let k = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    let kf = cholesky_safe(&k, jitter_schedule)?;
    Ok(LowRankFactor {
        f: &s.matrix * &kf.l,
        jitter_used: kf.jitter_used,
        precision_escalated: kf.precision_escalated,
    })
}

/// Capacitance quantities shared by the value and the gradient.
struct Capacitance {
    /// `Λ⁻¹ F`.
    h: DMatrix<f64>,
    /// Cholesky factor of `I + Fᵀ Λ⁻¹ F`.
    chol: SpdFactor,
}

fn capacitance(f: &DMatrix<f64>, noise: &DVector<f64>) -> Result<Capacitance> {
    let mut h = f.clone();
    for (i, mut row) in h.row_iter_mut().enumerate() {
        row /= noise[i];
    }
    let mut a = f.tr_mul(&h);
    for i in 0..a.nrows() {
        a[(i, i)] += 1.0;
    }
    let chol = cholesky_safe(&a, &[0.0])?;
    Ok(Capacitance { h, chol })
}

/// Returns `(log-density, C⁻¹ỹ)`.
fn logpdf_and_alpha(
    noise: &DVector<f64>,
    ytil: &DVector<f64>,
    cap: &Capacitance,
) -> (f64, DVector<f64>) {
    let p = ytil.len();
    let w = cap.h.tr_mul(ytil);
    let v = solve_lower(&cap.chol.l, &w);
    let quad = ytil
        .iter()
        .zip(noise.iter())
        .map(|(y, l)| y * y / l)
        .sum::<f64>()
        - v.norm_squared();
    let log_det = cap.chol.log_det() + noise.iter().map(|l| l.ln()).sum::<f64>();
    let a = ytil.component_div(noise) - &cap.h * cap.chol.solve(&w);
    (-0.5 * (quad + log_det + p as f64 * LN_2PI), a)
}

/// `log N(ỹ | 0, FFᵀ + Λ)` through Woodbury and the determinant lemma.
pub fn lowrank_logpdf(g: &LowRankGaussian, ytil: &DVector<f64>) -> Result<f64> {
    if ytil.len() != g.factor.nrows() || g.noise_diag.len() != g.factor.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows, labels {}, noise {}",
            g.factor.nrows(),
            ytil.len(),
            g.noise_diag.len()
        )));
    }
    if g.noise_diag.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidConfig(
            "noise diagonal must be strictly positive".into(),
        ));
    }
    let cap = capacitance(&g.factor, &g.noise_diag)?;
    Ok(logpdf_and_alpha(&g.noise_diag, ytil, &cap).0)
}

/// Exact low-rank objective value and its natural-parameter gradient.
pub(crate) struct LowRankEval {
    pub value: f64,
    pub gradient: ParamGradient,
    pub jitter_used: f64,
}

/// Sums the adjoint of the noise diagonal into value and gradient variances.
pub(crate) fn noise_gradient(lbar: &DVector<f64>, q: usize) -> (f64, f64) {
    let mut v = 0.0;
    let mut g = 0.0;
    for (i, x) in lbar.iter().enumerate() {
        if i % q == 0 {
            v += x;
        } else {
            g += x;
        }
    }
    (v, g)
}

/// Backpropagates `K̄` and `S̄` into the natural parameters.
pub(crate) fn backprop(
    x: &DMatrix<f64>,
    params: &DsoftkiParams,
    observations: Observations,
    gram: &DMatrix<f64>,
    kbar: &DMatrix<f64>,
    sbar: &DMatrix<f64>,
    lbar: &DVector<f64>,
) -> ParamGradient {
    let gk = gram_vjp(&params.field.points, &params.kernel, gram, kbar);
    let (zbar, tbar) = interp_vjp(x, &params.field, observations, sbar);
    let (value_noise, gradient_noise) =
        noise_gradient(lbar, observations.rows_per_point(params.dim()));
    ParamGradient {
        lengthscales: gk.lengthscales,
        scale: gk.scale,
        points: gk.points + zbar,
        temperatures: tbar,
        value_noise,
        gradient_noise,
    }
}

pub(crate) fn lowrank_objective(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    observations: Observations,
    jitter_schedule: &[f64],
) -> Result<LowRankEval> {
    let n = x.nrows();
    let q = observations.rows_per_point(params.dim());
    let s = assemble_interp(x, &params.field, observations).matrix;
    let gram = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    let kf = cholesky_safe(&gram, jitter_schedule)?;
    let noise = params.noise.diagonal(n, q);
    let f = &s * &kf.l;
    let cap = capacitance(&f, &noise)?;
    let (value, a) = logpdf_and_alpha(&noise, ytil, &cap);
    if !value.is_finite() {
        return Err(Error::FactorizationFailed {
            max_jitter: kf.jitter_used,
        });
    }

    // C⁻¹S = Λ⁻¹S − h A⁻¹ (hᵀS)
    let hts = cap.h.tr_mul(&s);
    let mut cinv_s = s.clone();
    for (i, mut row) in cinv_s.row_iter_mut().enumerate() {
        row /= noise[i];
    }
    cinv_s -= &cap.h * cap.chol.solve_matrix(&hts);

    let sta = s.tr_mul(&a);
    let mut kbar = &sta * sta.transpose() - s.tr_mul(&cinv_s);
    kbar *= 0.5;

    let mut kj = gram.clone();
    for i in 0..kj.nrows() {
        kj[(i, i)] += kf.jitter_used;
    }
    let sbar = (&a * sta.transpose() - cinv_s) * &kj;

    // diag(C⁻¹)_i = 1/Λ_i − ‖M⁻¹ h_iᵀ‖²
    let g = solve_lower_matrix(&cap.chol.l, &cap.h.transpose());
    let lbar = DVector::from_fn(a.len(), |i, _| {
        let dinv = 1.0 / noise[i] - g.column(i).norm_squared();
        0.5 * (a[i] * a[i] - dinv)
    });

    let gradient = backprop(x, params, observations, &gram, &kbar, &sbar, &lbar);
    Ok(LowRankEval {
        value,
        gradient,
        jitter_used: kf.jitter_used,
    })
}
