//! Hutchinson pseudoloss: an iterative surrogate whose gradient estimates the
//! log-likelihood gradient without any dense factorization of `K_zz`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::Result;
use crate::interp::{assemble_interp, Observations};
use crate::kernels::kernel_matrix;
use crate::linalg::{
    cg_solve, pivoted_cholesky_precond, CgOptions, LinearOperator, Preconditioner,
};

use super::lowrank::backprop;
use super::params::{DsoftkiParams, ParamGradient};

/// Rank of the pivoted-Cholesky preconditioner.
pub const PRECONDITIONER_RANK: usize = 10;

/// `S K Sᵀ`, applied lazily.
struct InterpKernelOperator<'a> {
    s: &'a DMatrix<f64>,
    k: &'a DMatrix<f64>,
    sk: DMatrix<f64>,
}

impl<'a> InterpKernelOperator<'a> {
    fn new(s: &'a DMatrix<f64>, k: &'a DMatrix<f64>) -> Self {
        InterpKernelOperator { s, k, sk: s * k }
    }
}

impl LinearOperator for InterpKernelOperator<'_> {
    fn nrows(&self) -> usize {
        self.s.nrows()
    }
    fn ncols(&self) -> usize {
        self.s.nrows()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.s * (self.k * self.s.tr_mul(v))
    }
    fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.s.nrows(), |i, _| self.sk.row(i).dot(&self.s.row(i)))
    }
    fn column(&self, j: usize) -> DVector<f64> {
        &self.sk * self.s.row(j).transpose()
    }
}

/// `S K Sᵀ + diag(noise)`.
pub struct DsoftkiOperator<'a> {
    kernel: InterpKernelOperator<'a>,
    noise: &'a DVector<f64>,
}

impl LinearOperator for DsoftkiOperator<'_> {
    fn nrows(&self) -> usize {
        self.kernel.nrows()
    }
    fn ncols(&self) -> usize {
        self.kernel.ncols()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.kernel.apply(v) + v.component_mul(self.noise)
    }
    fn diagonal(&self) -> DVector<f64> {
        self.kernel.diagonal() + self.noise
    }
    fn column(&self, j: usize) -> DVector<f64> {
        let mut c = self.kernel.column(j);
        c[j] += self.noise[j];
        c
    }
}

/// Standard Gaussian probes rescaled to unit length.
pub fn sample_probes(p: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let norm: f64 = z.norm();
            if norm > 0.0 {
                z / norm
            } else {
                z
            }
        })
        .collect()
}

/// Solutions of `D u_0 = ỹ` and `D u_j = z_j` and the resulting pseudoloss.
#[derive(Debug, Clone)]
pub struct Pseudoloss {
    pub value: f64,
    pub u0: DVector<f64>,
    pub probes: Vec<DVector<f64>>,
    pub solves: Vec<DVector<f64>>,
    /// Largest CG iteration count among the solves.
    pub iterations: usize,
}

/// Evaluates `−½[u_0ᵀ D u_0 + (1/l) Σ_j u_jᵀ D z_j]` with CG solves.
pub fn hutchinson_pseudoloss(
    op: &(dyn LinearOperator + Sync),
    precond: &(dyn Preconditioner + Sync),
    ytil: &DVector<f64>,
    num_probes: usize,
    seed: u64,
    cg: CgOptions,
) -> Result<Pseudoloss> {
    let probes = sample_probes(ytil.len(), num_probes, seed);
    let rhs: Vec<&DVector<f64>> = std::iter::once(ytil).chain(probes.iter()).collect();
    let sols = rhs
        .par_iter()
        .map(|b| cg_solve(op, b, precond, cg))
        .collect::<Result<Vec<_>>>()?;
    let iterations = sols.iter().map(|s| s.iterations).max().unwrap_or(0);
    let mut xs = sols.into_iter().map(|s| s.x);
    let u0 = xs.next().expect("the label solve is always present");
    let solves: Vec<_> = xs.collect();
    let mut trace = 0.0;
    for (u, z) in solves.iter().zip(&probes) {
        trace += u.dot(&op.apply(z));
    }
    if num_probes > 0 {
        trace /= num_probes as f64;
    }
    let value = -0.5 * (u0.dot(&op.apply(&u0)) + trace);
    Ok(Pseudoloss {
        value,
        u0,
        probes,
        solves,
        iterations,
    })
}

pub(crate) struct PseudolossEval {
    pub value: f64,
    pub gradient: ParamGradient,
}

/// Pseudoloss value and the log-likelihood gradient estimate it induces.
///
/// The solves are held fixed, and the trace term carries a factor `p`
/// because unit-length probes have second moment `I/p`.
pub(crate) fn pseudoloss_objective(
    x: &DMatrix<f64>,
    ytil: &DVector<f64>,
    params: &DsoftkiParams,
    observations: Observations,
    num_probes: usize,
    seed: u64,
    cg: CgOptions,
) -> Result<PseudolossEval> {
    let n = x.nrows();
    let q = observations.rows_per_point(params.dim());
    let p = n * q;
    let s = assemble_interp(x, &params.field, observations).matrix;
    let gram = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    let noise = params.noise.diagonal(n, q);
    let op = DsoftkiOperator {
        kernel: InterpKernelOperator::new(&s, &gram),
        noise: &noise,
    };
    let precond = pivoted_cholesky_precond(&op.kernel, PRECONDITIONER_RANK, &noise)?;
    let pl = hutchinson_pseudoloss(&op, &precond, ytil, num_probes, seed, cg)?;

    let l = num_probes.max(1) as f64;
    let cols = 1 + pl.solves.len();
    let mut coef = vec![-(p as f64) / (2.0 * l); cols];
    coef[0] = 0.5;
    let u = DMatrix::from_columns(
        &std::iter::once(&pl.u0)
            .chain(pl.solves.iter())
            .cloned()
            .collect::<Vec<_>>(),
    );
    let b = DMatrix::from_columns(
        &std::iter::once(&pl.u0)
            .chain(pl.probes.iter())
            .cloned()
            .collect::<Vec<_>>(),
    );
    let c = DMatrix::from_diagonal(&DVector::from_vec(coef));
    let stu = s.tr_mul(&u);
    let stb = s.tr_mul(&b);
    let kbar = &stu * &c * stb.transpose();
    let sbar = &u * &c * (&gram * &stb).transpose() + &b * &c * (&gram * &stu).transpose();
    let lbar = (u.component_mul(&b) * c).column_sum();
    let gradient = backprop(x, params, observations, &gram, &kbar, &sbar, &lbar);
    Ok(PseudolossEval {
        value: pl.value,
        gradient,
    })
}
