//! Dense factorizations and iterative solvers shared by the GP models.
//!
//! Everything here works on `nalgebra` dynamic matrices in `f64`. The Cholesky
//! routine escalates to a compensated (double-double) accumulation when the
//! plain factorization breaks down, mirroring the usual "retry in higher
//! precision" strategy for nearly singular Gram matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Jitter levels tried in order by [`cholesky_safe`].
pub const DEFAULT_JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Relative asymmetry tolerated on input to [`cholesky_safe`].
const SYMMETRY_TOL: f64 = 1e-10;

/// Lower Cholesky factor of `A + jitter_used * I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub l: DMatrix<f64>,
    pub jitter_used: f64,
    pub precision_escalated: bool,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = solve_lower(&self.l, b);
        solve_lower_transpose(&self.l, &y)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = solve_lower_matrix(&self.l, b);
        solve_lower_transpose_matrix(&self.l, &y)
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `L Lᵀ`, i.e. the jittered matrix that was actually factored.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}

/// Cholesky factorization with a jitter schedule and precision escalation.
///
/// Each schedule entry is tried first with plain `f64` accumulation and then
/// with compensated accumulation. A pivot is rejected when it does not exceed
/// `dim * f64::EPSILON * max_diag`, i.e. when it is indistinguishable from
/// round-off in the stored factor.
pub fn cholesky_safe(a: &DMatrix<f64>, jitter_schedule: &[f64]) -> Result<SpdFactor> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    check_symmetric(a)?;
    if n == 0 {
        return Ok(SpdFactor {
            l: DMatrix::zeros(0, 0),
            jitter_used: 0.0,
            precision_escalated: false,
        });
    }
    let mut max_jitter = 0.0f64;
    for &jitter in jitter_schedule {
        max_jitter = max_jitter.max(jitter);
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(l) = cholesky_plain(&shifted) {
            return Ok(SpdFactor {
                l,
                jitter_used: jitter,
                precision_escalated: false,
            });
        }
        if let Some(l) = cholesky_compensated(&shifted) {
            return Ok(SpdFactor {
                l,
                jitter_used: jitter,
                precision_escalated: true,
            });
        }
    }
    Err(Error::FactorizationFailed { max_jitter })
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let scale = a.amax();
    if scale == 0.0 {
        return Ok(());
    }
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::DimensionMismatch(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn pivot_floor(a: &DMatrix<f64>) -> Option<f64> {
    let max_diag = a.diagonal().max();
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    Some(a.nrows() as f64 * f64::EPSILON * max_diag)
}

/// Column-oriented Cholesky in plain `f64`.
fn cholesky_plain(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let floor = pivot_floor(a)?;
    let mut l = a.lower_triangle();
    for j in 0..n {
        let mut pivot = l[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > floor) {
            return None;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Cholesky with double-double accumulation of every inner product.
fn cholesky_compensated(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let floor = pivot_floor(a)?;
    let mut hi = DMatrix::<f64>::zeros(n, n);
    let mut lo = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = DoubleDouble::from(a[(j, j)]);
        for k in 0..j {
            let v = DoubleDouble::new(hi[(j, k)], lo[(j, k)]);
            pivot = pivot - v * v;
        }
        if !(pivot.value() > floor) {
            return None;
        }
        let d = pivot.sqrt();
        hi[(j, j)] = d.hi;
        lo[(j, j)] = d.lo;
        for i in (j + 1)..n {
            let mut s = DoubleDouble::from(a[(i, j)]);
            for k in 0..j {
                let x = DoubleDouble::new(hi[(i, k)], lo[(i, k)]);
                let y = DoubleDouble::new(hi[(j, k)], lo[(j, k)]);
                s = s - x * y;
            }
            let q = s / d;
            hi[(i, j)] = q.hi;
            lo[(i, j)] = q.lo;
        }
    }
    Some(hi)
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn new(hi: f64, lo: f64) -> Self {
        let (s, e) = two_sum(hi, lo);
        DoubleDouble { hi: s, lo: e }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }

    fn sqrt(self) -> Self {
        let root = self.hi.sqrt();
        // One Newton step from the f64 root recovers the full width.
        let sq = DoubleDouble::from(root) * DoubleDouble::from(root);
        let correction = (self - sq).value() / (2.0 * root);
        DoubleDouble::new(root, correction)
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        DoubleDouble { hi: v, lo: 0.0 }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl std::ops::Add for DoubleDouble {
    type Output = DoubleDouble;
    fn add(self, o: DoubleDouble) -> DoubleDouble {
        let (s, e) = two_sum(self.hi, o.hi);
        DoubleDouble::new(s, e + self.lo + o.lo)
    }
}

impl std::ops::Sub for DoubleDouble {
    type Output = DoubleDouble;
    fn sub(self, o: DoubleDouble) -> DoubleDouble {
        self + DoubleDouble { hi: -o.hi, lo: -o.lo }
    }
}

impl std::ops::Mul for DoubleDouble {
    type Output = DoubleDouble;
    fn mul(self, o: DoubleDouble) -> DoubleDouble {
        let (p, e) = two_prod(self.hi, o.hi);
        DoubleDouble::new(p, e + self.hi * o.lo + self.lo * o.hi)
    }
}

impl std::ops::Div for DoubleDouble {
    type Output = DoubleDouble;
    fn div(self, o: DoubleDouble) -> DoubleDouble {
        let q1 = self.hi / o.hi;
        let r = self - o * DoubleDouble::from(q1);
        let q2 = r.hi / o.hi;
        DoubleDouble::new(q1, q2)
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for j in 0..n {
        x[j] /= l[(j, j)];
        let xj = x[j];
        for i in (j + 1)..n {
            x[i] -= l[(i, j)] * xj;
        }
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for j in (0..n).rev() {
        x[j] /= r[(j, j)];
        let xj = x[j];
        for i in 0..j {
            x[i] -= r[(i, j)] * xj;
        }
    }
    x
}

/// Solves `L X = B` column by column.
pub fn solve_lower_matrix(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        let mut col = x.column_mut(c);
        for j in 0..n {
            col[j] /= l[(j, j)];
            let xj = col[j];
            if xj != 0.0 {
                for i in (j + 1)..n {
                    col[i] -= l[(i, j)] * xj;
                }
            }
        }
    }
    x
}

/// Solves `Lᵀ X = B` column by column.
pub fn solve_lower_transpose_matrix(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    for c in 0..x.ncols() {
        let col = solve_lower_transpose(l, &x.column(c).into_owned());
        x.set_column(c, &col);
    }
    x
}

/// Solves `Rᵀ X = B` for upper-triangular `R` (a forward substitution).
pub fn solve_upper_transpose_matrix(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        let mut col = x.column_mut(c);
        for i in 0..n {
            let mut s = col[i];
            let rc = r.column(i);
            for k in 0..i {
                s -= rc[k] * col[k];
            }
            col[i] = s / r[(i, i)];
        }
    }
    x
}

/// Householder QR kept in compact form.
///
/// Used directly by the streaming least-squares fit, which only needs `R`
/// and `Qᵀ b`, never the explicit `Q`.
#[derive(Debug, Clone)]
pub(crate) struct HouseholderQr {
    qr: DMatrix<f64>,
    tau: Vec<f64>,
    signs: Vec<f64>,
}

impl HouseholderQr {
    pub(crate) fn new(mut a: DMatrix<f64>) -> Self {
        let (p, m) = a.shape();
        let steps = m.min(p);
        let mut tau = vec![0.0; steps];
        for k in 0..steps {
            let norm = a.view((k, k), (p - k, 1)).norm();
            if norm == 0.0 {
                continue;
            }
            let alpha = if a[(k, k)] >= 0.0 { -norm } else { norm };
            // v = x - alpha e1, stored in place with v[0] implicit.
            let v0 = a[(k, k)] - alpha;
            for i in (k + 1)..p {
                a[(i, k)] /= v0;
            }
            tau[k] = -v0 / alpha;
            a[(k, k)] = alpha;
            for j in (k + 1)..m {
                let mut s = a[(k, j)];
                for i in (k + 1)..p {
                    s += a[(i, k)] * a[(i, j)];
                }
                s *= tau[k];
                a[(k, j)] -= s;
                for i in (k + 1)..p {
                    let vik = a[(i, k)];
                    a[(i, j)] -= s * vik;
                }
            }
        }
        let signs = (0..steps)
            .map(|k| if a[(k, k)] < 0.0 { -1.0 } else { 1.0 })
            .collect();
        HouseholderQr { qr: a, tau, signs }
    }

    /// Upper-triangular factor with a nonnegative diagonal.
    pub(crate) fn r(&self) -> DMatrix<f64> {
        let m = self.qr.ncols();
        let k = self.tau.len();
        let mut r = DMatrix::zeros(k, m);
        for i in 0..k {
            for j in i..m {
                r[(i, j)] = self.signs[i] * self.qr[(i, j)];
            }
        }
        r
    }

    /// First `m` entries of `Qᵀ b`, consistent with the sign convention of [`Self::r`].
    pub(crate) fn qt_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        let p = self.qr.nrows();
        let mut y = b.clone();
        for k in 0..self.tau.len() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut s = y[k];
            for i in (k + 1)..p {
                s += self.qr[(i, k)] * y[i];
            }
            s *= self.tau[k];
            y[k] -= s;
            for i in (k + 1)..p {
                y[i] -= s * self.qr[(i, k)];
            }
        }
        DVector::from_iterator(
            self.tau.len(),
            (0..self.tau.len()).map(|k| self.signs[k] * y[k]),
        )
    }

    /// Explicit thin `Q` (p×k).
    pub(crate) fn q(&self) -> DMatrix<f64> {
        let p = self.qr.nrows();
        let k = self.tau.len();
        let mut q = DMatrix::zeros(p, k);
        for c in 0..k {
            q[(c, c)] = 1.0;
        }
        for kk in (0..k).rev() {
            if self.tau[kk] == 0.0 {
                continue;
            }
            for c in 0..k {
                let mut s = q[(kk, c)];
                for i in (kk + 1)..p {
                    s += self.qr[(i, kk)] * q[(i, c)];
                }
                s *= self.tau[kk];
                q[(kk, c)] -= s;
                for i in (kk + 1)..p {
                    q[(i, c)] -= s * self.qr[(i, kk)];
                }
            }
        }
        for c in 0..k {
            if self.signs[c] < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
        q
    }
}

/// Checks `|R_ii| >= 1e-12 max_j |R_jj|`.
pub fn check_rank(r: &DMatrix<f64>) -> Result<()> {
    let diag = r.diagonal();
    let max = diag.amax();
    for (i, v) in diag.iter().enumerate() {
        if !(v.abs() >= 1e-12 * max) || max == 0.0 {
            return Err(Error::RankDeficient { index: i, value: *v });
        }
    }
    Ok(())
}

/// Thin QR of a tall matrix with a nonnegative `R` diagonal.
pub fn qr_thin(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, m) = a.shape();
    if p < m {
        return Err(Error::DimensionMismatch(format!(
            "thin QR needs rows >= cols, got {p}x{m}"
        )));
    }
    let qr = HouseholderQr::new(a.clone());
    let r = qr.r();
    check_rank(&r)?;
    Ok((qr.q(), r))
}

/// Square linear map accessed through products and diagonal entries.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn diagonal(&self) -> DVector<f64>;

    fn column(&self, j: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.ncols());
        e[j] = 1.0;
        self.apply(&e)
    }
}

/// A dense matrix viewed as an operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }
    fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }
    fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }
}

/// Approximate inverse applied inside conjugate gradients.
pub trait Preconditioner {
    fn apply(&self, r: &DVector<f64>) -> DVector<f64>;
}

/// No preconditioning.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        r.clone()
    }
}

/// Applies `(P Pᵀ + diag(noise))⁻¹` through the Woodbury identity, where `P`
/// is a partial pivoted Cholesky factor.
#[derive(Debug, Clone)]
pub struct PivotedCholeskyPreconditioner {
    factor: DMatrix<f64>,
    noise: DVector<f64>,
    capacitance: DMatrix<f64>,
}

impl PivotedCholeskyPreconditioner {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

impl Preconditioner for PivotedCholeskyPreconditioner {
    fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        let scaled = r.component_div(&self.noise);
        if self.factor.ncols() == 0 {
            return scaled;
        }
        let t = self.factor.tr_mul(&scaled);
        let t = solve_lower_transpose(&self.capacitance, &solve_lower(&self.capacitance, &t));
        let correction = (&self.factor * t).component_div(&self.noise);
        scaled - correction
    }
}

/// Greedy pivoted Cholesky of `op` to rank `rank`, paired with `noise_diag`.
///
/// Stops early once the residual diagonal is exhausted.
pub fn pivoted_cholesky_precond(
    op: &dyn LinearOperator,
    rank: usize,
    noise_diag: &DVector<f64>,
) -> Result<PivotedCholeskyPreconditioner> {
    let n = op.nrows();
    if noise_diag.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "noise diagonal has {} entries for a {n}-dimensional operator",
            noise_diag.len()
        )));
    }
    let rank = rank.min(n);
    let mut residual = op.diagonal();
    let scale = residual.amax();
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(rank);
    let mut used = vec![false; n];
    for _ in 0..rank {
        let mut pivot = None;
        let mut best = 0.0;
        for i in 0..n {
            if !used[i] && residual[i] > best {
                best = residual[i];
                pivot = Some(i);
            }
        }
        let Some(i) = pivot else { break };
        if best <= 1e-14 * scale {
            break;
        }
        used[i] = true;
        let mut col = op.column(i);
        for prev in &columns {
            let w = prev[i];
            col.axpy(-w, prev, 1.0);
        }
        col /= best.sqrt();
        for k in 0..n {
            residual[k] -= col[k] * col[k];
        }
        residual[i] = 0.0;
        columns.push(col);
    }
    let factor = if columns.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    let k = factor.ncols();
    let mut cap = DMatrix::identity(k, k);
    if k > 0 {
        let scaled = DMatrix::from_fn(n, k, |i, j| factor[(i, j)] / noise_diag[i]);
        cap += factor.tr_mul(&scaled);
    }
    let capacitance = cholesky_safe(&cap, &DEFAULT_JITTER_SCHEDULE)?.l;
    Ok(PivotedCholeskyPreconditioner {
        factor,
        noise: noise_diag.clone(),
        capacitance,
    })
}

/// Stopping rule for [`cg_solve`].
#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-5,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients for an SPD operator.
///
/// Convergence is judged on the true residual `‖op(x) − b‖ / ‖b‖`; when the
/// recurrence residual claims convergence but the true one disagrees, the
/// iteration restarts from the current iterate.
pub fn cg_solve(
    op: &dyn LinearOperator,
    b: &DVector<f64>,
    precond: &dyn Preconditioner,
    opts: CgOptions,
) -> Result<CgSolution> {
    let n = op.nrows();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has {} entries for a {n}-dimensional operator",
            b.len()
        )));
    }
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut iterations = 0;
    let mut r = b.clone();
    loop {
        let mut z = precond.apply(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        while iterations < opts.max_iter {
            if r.norm() / b_norm <= opts.tol {
                break;
            }
            let ap = op.apply(&p);
            let pap = p.dot(&ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            iterations += 1;
            z = precond.apply(&r);
            let rz_next = r.dot(&z);
            let beta = rz_next / rz;
            rz = rz_next;
            p = &z + beta * &p;
        }
        r = b - op.apply(&x);
        let residual = r.norm() / b_norm;
        if residual <= opts.tol {
            return Ok(CgSolution {
                x,
                iterations,
                residual,
            });
        }
        if iterations >= opts.max_iter || !residual.is_finite() {
            return Err(Error::NotConverged {
                iterations,
                residual,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, p: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky_safe(&DMatrix::identity(3, 3), &DEFAULT_JITTER_SCHEDULE).unwrap();
        assert_eq!(f.l, DMatrix::identity(3, 3));
        assert_eq!(f.jitter_used, 0.0);
        assert!(!f.precision_escalated);
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky_safe(&a, &DEFAULT_JITTER_SCHEDULE).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert!((&f.l - expected).amax() < 1e-15);
        assert!(rel_frobenius(&f.reconstruct(), &a) < 1e-15);
    }

    #[test]
    fn cholesky_rank_one_needs_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let a = &v * v.transpose();
        let f = cholesky_safe(&a, &DEFAULT_JITTER_SCHEDULE).unwrap();
        assert!(f.jitter_used > 0.0);
        let target = &a + DMatrix::identity(5, 5) * f.jitter_used;
        assert!((f.reconstruct() - &target).norm() / a.norm() <= 1e-6);
    }

    #[test]
    fn cholesky_fails_on_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_safe(&a, &DEFAULT_JITTER_SCHEDULE),
            Err(Error::FactorizationFailed { .. })
        ));
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(cholesky_safe(&a, &DEFAULT_JITTER_SCHEDULE).is_err());
    }

    #[test]
    fn compensated_matches_plain_on_easy_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_matrix(&mut rng, 6, 6);
        let a = b.transpose() * &b + DMatrix::identity(6, 6);
        let plain = cholesky_plain(&a).unwrap();
        let comp = cholesky_compensated(&a).unwrap();
        assert!((plain - comp).amax() < 1e-13);
    }

    #[test]
    fn qr_identity() {
        let (q, r) = qr_thin(&DMatrix::identity(4, 4)).unwrap();
        assert!((q - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
        assert!((r - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn qr_random_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 5, 3);
        let (q, r) = qr_thin(&a).unwrap();
        assert!((q.tr_mul(&q) - DMatrix::<f64>::identity(3, 3)).norm() < 1e-6);
        assert!(rel_frobenius(&(&q * &r), &a) < 1e-6);
        assert!(r.diagonal().iter().all(|v| *v >= 0.0));
        assert!(r.lower_triangle() == DMatrix::from_diagonal(&r.diagonal()));
    }

    #[test]
    fn qr_duplicated_column_is_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = random_matrix(&mut rng, 6, 3);
        let c0 = a.column(0).into_owned();
        a.set_column(2, &c0);
        assert!(matches!(qr_thin(&a), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn qt_mul_matches_explicit_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 9, 4);
        let b = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let qr = HouseholderQr::new(a);
        let explicit = qr.q().tr_mul(&b);
        assert!((qr.qt_mul(&b) - explicit).amax() < 1e-13);
    }

    #[test]
    fn cg_identity_one_iteration() {
        let op = DenseOperator(DMatrix::identity(4, 4));
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let sol = cg_solve(&op, &b, &IdentityPreconditioner, CgOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.x - b).amax() < 1e-15);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 6, 6);
        let spd = a.transpose() * &a + DMatrix::identity(6, 6);
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let dense = spd.clone().lu().solve(&b).unwrap();
        let sol = cg_solve(
            &DenseOperator(spd),
            &b,
            &IdentityPreconditioner,
            CgOptions::default(),
        )
        .unwrap();
        assert!((sol.x - &dense).norm() / dense.norm() < 1e-4);
    }

    #[test]
    fn cg_ill_conditioned_not_converged() {
        let op = DenseOperator(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12])));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let res = cg_solve(
            &op,
            &b,
            &IdentityPreconditioner,
            CgOptions {
                tol: 1e-5,
                max_iter: 2,
            },
        );
        assert!(matches!(res, Err(Error::NotConverged { .. })), "{res:?}");
    }

    #[test]
    fn pivoted_cholesky_diagonal_exact() {
        let d = DVector::from_vec(vec![3.0, 1.0, 2.0, 0.5]);
        let op = DenseOperator(DMatrix::from_diagonal(&d));
        let pc = pivoted_cholesky_precond(&op, 4, &DVector::from_element(4, 1.0)).unwrap();
        let p = pc.factor();
        assert!((p * p.transpose() - &op.0).amax() < 1e-14);
    }

    #[test]
    fn pivoted_cholesky_zero_operator() {
        let op = DenseOperator(DMatrix::zeros(3, 3));
        let noise = DVector::from_vec(vec![2.0, 4.0, 0.5]);
        let pc = pivoted_cholesky_precond(&op, 10, &noise).unwrap();
        assert_eq!(pc.rank(), 0);
        let r = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert!((pc.apply(&r) - DVector::from_vec(vec![0.5, 0.25, 2.0])).amax() < 1e-15);
    }

    #[test]
    fn pivoted_cholesky_full_rank_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 8, 8);
        let spd = a.transpose() * &a + DMatrix::identity(8, 8) * 0.1;
        let op = DenseOperator(spd.clone());
        let pc = pivoted_cholesky_precond(&op, 8, &DVector::from_element(8, 1e-3)).unwrap();
        let p = pc.factor();
        assert!(rel_frobenius(&(p * p.transpose()), &spd) < 1e-6);
    }

    #[test]
    fn preconditioner_applies_woodbury_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 6, 2);
        let low = &a * a.transpose();
        let noise = DVector::from_fn(6, |_, _| rng.random_range(0.5..1.5));
        let pc = pivoted_cholesky_precond(&DenseOperator(low.clone()), 6, &noise).unwrap();
        let full = low + DMatrix::from_diagonal(&noise);
        let r = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let direct = full.lu().solve(&r).unwrap();
        assert!((pc.apply(&r) - direct).amax() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn cholesky_reconstructs(seed in any::<u64>(), n in 1usize..12) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = random_matrix(&mut rng, n, n);
                let a = b.transpose() * &b;
                let f = cholesky_safe(&a, &DEFAULT_JITTER_SCHEDULE).unwrap();
                let target = &a + DMatrix::identity(n, n) * f.jitter_used;
                prop_assert!((f.reconstruct() - target).norm() / a.norm() <= 1e-6);
                prop_assert!(f.l.diagonal().iter().all(|v| *v > 0.0));
            }

            #[test]
            fn cg_converges_within_dimension(seed in any::<u64>(), n in 1usize..=16) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = random_matrix(&mut rng, n, n);
                let spd = b.transpose() * &b + DMatrix::identity(n, n);
                let rhs = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let op = DenseOperator(spd);
                let pc = pivoted_cholesky_precond(&op, n, &DVector::from_element(n, 1e-6)).unwrap();
                let sol = cg_solve(&op, &rhs, &pc, CgOptions { tol: 1e-8, max_iter: n }).unwrap();
                prop_assert!(sol.iterations <= n);
            }

            #[test]
            fn operator_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let op = DenseOperator(random_matrix(&mut rng, 5, 5));
                let u = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
                let v = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
                let lhs = op.apply(&(a * &u + b * &v));
                let rhs = a * op.apply(&u) + b * op.apply(&v);
                prop_assert!((lhs - rhs).amax() < 1e-12);
            }
        }
    }
}
