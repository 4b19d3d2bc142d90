//! Dense exact GP and GP-with-derivatives regression.
//!
//! Cubic in `n(d+1)`; meant as a reference for small problems, so every entry
//! point refuses systems larger than [`ORACLE_LIMIT`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gpwd_matrix, kernel_matrix, KernelParams};
use crate::linalg::{cholesky_safe, solve_lower_matrix, SpdFactor, DEFAULT_JITTER_SCHEDULE};
use crate::transform::NOISE_FLOOR;

/// Largest joint system size the dense oracle accepts.
pub const ORACLE_LIMIT: usize = 4000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Value and gradient observation noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpwdNoise {
    pub value: f64,
    pub gradient: f64,
}

impl GpwdNoise {
    /// Both variances are clamped to the positivity floor.
    pub fn new(value: f64, gradient: f64) -> Self {
        GpwdNoise {
            value: value.max(NOISE_FLOOR),
            gradient: gradient.max(NOISE_FLOOR),
        }
    }

    /// Interleaved noise diagonal for `n` points with `q` rows each
    /// (`q = 1` for value-only data).
    pub fn diagonal(&self, n: usize, q: usize) -> DVector<f64> {
        DVector::from_fn(n * q, |r, _| {
            if r % q == 0 {
                self.value
            } else {
                self.gradient
            }
        })
    }
}

fn guard(size: usize) -> Result<()> {
    if size > ORACLE_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }
    Ok(())
}

fn check_labels(x: &DMatrix<f64>, labels: &DVector<f64>, q: usize) -> Result<()> {
    if labels.len() != x.nrows() * q {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} points with {q} outputs each",
            labels.len(),
            x.nrows()
        )));
    }
    Ok(())
}

/// `log N(y | 0, LLᵀ)` from a Cholesky factor.
fn logpdf_from_factor(f: &SpdFactor, y: &DVector<f64>) -> f64 {
    let w = crate::linalg::solve_lower(&f.l, y);
    -0.5 * (w.norm_squared() + f.log_det() + y.len() as f64 * LN_2PI)
}

/// Marginal log-likelihood of interleaved labels under the exact GPwD prior.
pub fn exact_gpwd_mll(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    kp: &KernelParams,
    noise: GpwdNoise,
) -> Result<f64> {
    let q = x.ncols() + 1;
    guard(x.nrows() * q)?;
    check_labels(x, ytil, q)?;
    let mut cov = gpwd_matrix(x, x, kp);
    cov.set_diagonal(&(cov.diagonal() + noise.diagonal(x.nrows(), q)));
    let f = cholesky_safe(&cov, &DEFAULT_JITTER_SCHEDULE)?;
    Ok(logpdf_from_factor(&f, ytil))
}

/// Marginal log-likelihood of values under the exact GP prior.
pub fn exact_gp_mll(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kp: &KernelParams,
    noise_var: f64,
) -> Result<f64> {
    guard(x.nrows())?;
    check_labels(x, y, 1)?;
    let mut cov = kernel_matrix(x, x, kp);
    cov.set_diagonal(&cov.diagonal().add_scalar(noise_var));
    let f = cholesky_safe(&cov, &DEFAULT_JITTER_SCHEDULE)?;
    Ok(logpdf_from_factor(&f, y))
}

/// Posterior mean and covariance from prior blocks.
fn posterior(
    k_xx_noisy: DMatrix<f64>,
    k_sx: DMatrix<f64>,
    k_ss: DMatrix<f64>,
    labels: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if k_xx_noisy.nrows() == 0 {
        return Ok((DVector::zeros(k_ss.nrows()), k_ss));
    }
    let f = cholesky_safe(&k_xx_noisy, &DEFAULT_JITTER_SCHEDULE)?;
    let weights = f.solve(labels);
    let mean = &k_sx * weights;
    let v = solve_lower_matrix(&f.l, &k_sx.transpose());
    let cov = k_ss - v.tr_mul(&v);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Exact GPwD posterior at `xstar` in interleaved `[value; gradient]` layout.
pub fn exact_gpwd_posterior(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    kp: &KernelParams,
    noise: GpwdNoise,
    xstar: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = x.ncols() + 1;
    guard(x.nrows() * q)?;
    guard(xstar.nrows() * q)?;
    check_labels(x, ytil, q)?;
    let mut k_xx = gpwd_matrix(x, x, kp);
    k_xx.set_diagonal(&(k_xx.diagonal() + noise.diagonal(x.nrows(), q)));
    posterior(
        k_xx,
        gpwd_matrix(xstar, x, kp),
        gpwd_matrix(xstar, xstar, kp),
        ytil,
    )
}

/// Exact value-only GP posterior at `xstar`.
pub fn exact_gp_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kp: &KernelParams,
    noise_var: f64,
    xstar: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    guard(x.nrows())?;
    guard(xstar.nrows())?;
    check_labels(x, y, 1)?;
    let mut k_xx = kernel_matrix(x, x, kp);
    k_xx.set_diagonal(&k_xx.diagonal().add_scalar(noise_var));
    posterior(
        k_xx,
        kernel_matrix(xstar, x, kp),
        kernel_matrix(xstar, xstar, kp),
        y,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_logpdf(cov: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        -0.5 * (y.dot(&(inv * y)) + det.ln() + y.len() as f64 * LN_2PI)
    }

    #[test]
    fn standard_normal_case() {
        // γ = 0.5 and ℓ = 1 give block diag(0.5, 0.5); adding 0.5 noise yields I.
        let x = DMatrix::from_row_slice(1, 1, &[0.3]);
        let kp = KernelParams::isotropic(1, 1.0, 0.5);
        let v = exact_gpwd_mll(&x, &DVector::zeros(2), &kp, GpwdNoise::new(0.5, 0.5)).unwrap();
        assert!((v + LN_2PI).abs() < 1e-12);
        assert!((v + 1.83788).abs() < 1e-5);
    }

    #[test]
    fn mll_decreases_along_eigenvector() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.0..1.0));
        let kp = KernelParams::isotropic(2, 0.7, 1.0);
        let noise = GpwdNoise::new(0.1, 0.1);
        let mut cov = gpwd_matrix(&x, &x, &kp);
        cov.set_diagonal(&(cov.diagonal() + noise.diagonal(3, 3)));
        let v = cov.symmetric_eigen().eigenvectors.column(0).into_owned();
        let mut last = f64::INFINITY;
        for s in [0.0, 0.5, 1.0, 2.0] {
            let val = exact_gpwd_mll(&x, &(&v * s), &kp, noise).unwrap();
            assert!(val < last);
            last = val;
        }
    }

    #[test]
    fn mll_matches_naive_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(0.0..1.0));
        let ytil = DVector::from_fn(15, |_, _| rng.random_range(-1.0..1.0));
        let kp = KernelParams::new(vec![0.4, 0.8], 1.3);
        let noise = GpwdNoise::new(0.05, 0.2);
        let mut cov = gpwd_matrix(&x, &x, &kp);
        cov.set_diagonal(&(cov.diagonal() + noise.diagonal(5, 3)));
        let expected = naive_logpdf(&cov, &ytil);
        let got = exact_gpwd_mll(&x, &ytil, &kp, noise).unwrap();
        assert!((got - expected).abs() <= 1e-8 * expected.abs());
    }

    #[test]
    fn noiseless_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let ytil = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let kp = KernelParams::isotropic(2, 0.3, 1.0);
        let (mean, _) = exact_gpwd_posterior(&x, &ytil, &kp, GpwdNoise::new(1e-9, 1e-9), &x).unwrap();
        for i in 0..4 {
            assert!((mean[3 * i] - ytil[3 * i]).abs() < 1e-4);
        }
    }

    #[test]
    fn no_data_gives_prior() {
        let kp = KernelParams::isotropic(2, 0.5, 2.0);
        let xs = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.5, 0.9]);
        let (mean, cov) = exact_gpwd_posterior(
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &kp,
            GpwdNoise::new(0.1, 0.1),
            &xs,
        )
        .unwrap();
        assert_eq!(mean, DVector::zeros(6));
        assert_eq!(cov, gpwd_matrix(&xs, &xs, &kp));
    }

    #[test]
    fn gp_single_point_and_far_field() {
        let kp = KernelParams::isotropic(1, 1.0, 2.0);
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_vec(vec![1.5]);
        let (m, _) = exact_gp_posterior(&x, &y, &kp, 1e-10, &x).unwrap();
        assert!((m[0] - 1.5).abs() < 1e-8);
        let far = DMatrix::from_row_slice(1, 1, &[100.0]);
        let noise = 0.1;
        let (m, c) = exact_gp_posterior(&x, &y, &kp, noise, &far).unwrap();
        assert!(m[0].abs() < 1e-12);
        assert!((c[(0, 0)] + noise - (kp.scale + noise)).abs() < 1e-12);
    }

    #[test]
    fn guard_rejects_large_problems() {
        let x = DMatrix::zeros(2001, 1);
        assert!(matches!(
            exact_gpwd_mll(&x, &DVector::zeros(4002), &KernelParams::isotropic(1, 1.0, 1.0), GpwdNoise::new(1.0, 1.0)),
            Err(Error::TooLarge { .. })
        ));
    }
}
