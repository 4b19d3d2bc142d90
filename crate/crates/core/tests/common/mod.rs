#![allow(dead_code)]

use dsoftki_core::interp::assemble_interp;
use dsoftki_core::kernels::kernel_matrix;
use dsoftki_core::{DsoftkiParams, GpwdNoise, InterpField, KernelParams, Observations};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_params(rng: &mut ChaCha8Rng, m: usize, d: usize) -> DsoftkiParams {
    DsoftkiParams {
        kernel: KernelParams::new((0..d).map(|_| rng.random_range(0.4..1.2)).collect(), rng.random_range(0.5..2.0)),
        field: InterpField::new(uniform(rng, m, d, 0.0, 1.0), uniform(rng, m, d, 0.3, 1.2)),
        noise: GpwdNoise::new(rng.random_range(0.02..0.2), rng.random_range(0.02..0.2)),
    }
}

/// Inputs, interleaved labels and parameters for a small random problem.
pub fn instance(
    seed: u64,
    n: usize,
    m: usize,
    d: usize,
    observations: Observations,
) -> (DMatrix<f64>, DVector<f64>, DsoftkiParams) {
    let mut r = rng(seed);
    let x = uniform(&mut r, n, d, 0.0, 1.0);
    let q = observations.rows_per_point(d);
    let y = DVector::from_fn(n * q, |_, _| r.random_range(-1.0..1.0));
    let params = random_params(&mut r, m, d);
    (x, y, params)
}

/// Dense `Σ̃ K Σ̃ᵀ` between two input sets.
pub fn dense_kernel(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    params: &DsoftkiParams,
    oa: Observations,
    ob: Observations,
    jitter: f64,
) -> DMatrix<f64> {
    let sa = assemble_interp(a, &params.field, oa).matrix;
    let sb = assemble_interp(b, &params.field, ob).matrix;
    let mut k = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    sa * k * sb.transpose()
}

/// Dense Gaussian log-density through an explicit Cholesky.
pub fn dense_logpdf(cov: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let ch = cov.clone().cholesky().expect("dense covariance is SPD");
    let quad = y.dot(&ch.solve(y));
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (quad + logdet + y.len() as f64 * LN_2PI)
}

/// Posterior mean of the GP with kernel `Σ̃ K Σ̃ᵀ`, by dense solves.
pub fn dense_posterior_mean(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &DsoftkiParams,
    observations: Observations,
    xs: &DMatrix<f64>,
    jitter: f64,
) -> DVector<f64> {
    let q = observations.rows_per_point(params.dim());
    let mut kxx = dense_kernel(x, x, params, observations, observations, jitter);
    let noise = params.noise.diagonal(x.nrows(), q);
    for i in 0..kxx.nrows() {
        kxx[(i, i)] += noise[i];
    }
    let ksx = dense_kernel(xs, x, params, Observations::ValuesAndGradients, observations, jitter);
    ksx * kxx.lu().solve(y).expect("dense system is solvable")
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}
