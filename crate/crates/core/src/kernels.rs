//! RBF kernel with ARD lengthscales, and the derivative blocks used by the
//! exact GP-with-derivatives oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `k(x, x') = scale * exp(-½ Σ_i (x_i − x'_i)² / ℓ_i²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub scale: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, scale: f64) -> Self {
        debug_assert!(lengthscales.iter().all(|l| *l > 0.0) && scale > 0.0);
        KernelParams {
            lengthscales,
            scale,
        }
    }

    /// All lengthscales equal to `lengthscale`.
    pub fn isotropic(d: usize, lengthscale: f64, scale: f64) -> Self {
        Self::new(vec![lengthscale; d], scale)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

fn scaled_sq_dist(x: &[f64], x2: &[f64], ls: &[f64]) -> f64 {
    x.iter()
        .zip(x2)
        .zip(ls)
        .map(|((a, b), l)| {
            let t = (a - b) / l;
            t * t
        })
        .sum()
}

pub fn kernel_eval(x: &[f64], x2: &[f64], p: &KernelParams) -> f64 {
    debug_assert_eq!(x.len(), x2.len());
    p.scale * (-0.5 * scaled_sq_dist(x, x2, &p.lengthscales)).exp()
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// `[k(X_i, Z_j)]_{ij}`.
pub fn kernel_matrix(x: &DMatrix<f64>, z: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    assert_eq!(x.ncols(), z.ncols(), "kernel_matrix: column counts differ");
    let xs: Vec<Vec<f64>> = (0..x.nrows()).map(|i| row(x, i)).collect();
    let zs: Vec<Vec<f64>> = (0..z.nrows()).map(|j| row(z, j)).collect();
    DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| kernel_eval(&xs[i], &zs[j], p))
}

/// `∇_x k(x, x2) = −k · (x − x2) / ℓ²`.
pub fn kernel_grad_x1(x: &[f64], x2: &[f64], p: &KernelParams) -> DVector<f64> {
    let k = kernel_eval(x, x2, p);
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(x2)
            .zip(&p.lengthscales)
            .map(|((a, b), l)| -k * (a - b) / (l * l)),
    )
}

/// `∂²k / ∂x_i ∂x2_j = k (δ_ij/ℓ_i² − u_i u_j)` with `u = (x − x2)/ℓ²`.
pub fn kernel_hess_cross(x: &[f64], x2: &[f64], p: &KernelParams) -> DMatrix<f64> {
    let d = x.len();
    let k = kernel_eval(x, x2, p);
    let u: Vec<f64> = (0..d)
        .map(|i| (x[i] - x2[i]) / (p.lengthscales[i] * p.lengthscales[i]))
        .collect();
    DMatrix::from_fn(d, d, |i, j| {
        let diag = if i == j {
            1.0 / (p.lengthscales[i] * p.lengthscales[i])
        } else {
            0.0
        };
        k * (diag - u[i] * u[j])
    })
}

/// Joint value/gradient covariance block between `x` and `x2`:
/// `[[k, ∇_{x2}k ᵀ], [∇_x k, ∇_x ∇_{x2}ᵀ k]]`.
pub fn gpwd_block(x: &[f64], x2: &[f64], p: &KernelParams) -> DMatrix<f64> {
    let d = x.len();
    let mut block = DMatrix::zeros(d + 1, d + 1);
    let k = kernel_eval(x, x2, p);
    block[(0, 0)] = k;
    let g = kernel_grad_x1(x, x2, p);
    for i in 0..d {
        block[(i + 1, 0)] = g[i];
        // ∇_{x2} k = −∇_x k for a stationary kernel.
        block[(0, i + 1)] = -g[i];
    }
    block
        .view_mut((1, 1), (d, d))
        .copy_from(&kernel_hess_cross(x, x2, p));
    block
}

/// Full `n1(d+1) × n2(d+1)` joint covariance in interleaved per-point layout.
pub fn gpwd_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let d = x1.ncols();
    let q = d + 1;
    let mut out = DMatrix::zeros(x1.nrows() * q, x2.nrows() * q);
    let rows2: Vec<Vec<f64>> = (0..x2.nrows()).map(|j| row(x2, j)).collect();
    for i in 0..x1.nrows() {
        let a = row(x1, i);
        for (j, b) in rows2.iter().enumerate() {
            out.view_mut((i * q, j * q), (q, q))
                .copy_from(&gpwd_block(&a, b, p));
        }
    }
    out
}

/// Gradients of `Σ_ab kbar_ab K_ab` with respect to the lengthscales, the
/// scale and the point locations, where `K = kernel_matrix(Z, Z)`.
pub(crate) struct GramGradient {
    pub lengthscales: Vec<f64>,
    pub scale: f64,
    pub points: DMatrix<f64>,
}

pub(crate) fn gram_vjp(
    z: &DMatrix<f64>,
    p: &KernelParams,
    gram: &DMatrix<f64>,
    kbar: &DMatrix<f64>,
) -> GramGradient {
    let (m, d) = z.shape();
    let mut ls = vec![0.0; d];
    let mut scale = 0.0;
    let mut points = DMatrix::zeros(m, d);
    let inv_l2: Vec<f64> = p.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    for b in 0..m {
        for a in 0..m {
            let w = kbar[(a, b)] * gram[(a, b)];
            if w == 0.0 {
                continue;
            }
            scale += w;
            for k in 0..d {
                let diff = z[(a, k)] - z[(b, k)];
                ls[k] += w * diff * diff * inv_l2[k] / p.lengthscales[k];
                let g = w * diff * inv_l2[k];
                points[(a, k)] -= g;
                points[(b, k)] += g;
            }
        }
    }
    GramGradient {
        lengthscales: ls,
        scale: scale / p.scale,
        points,
    }
}
