//! Softmax interpolation with one temperature vector per interpolation point.
//!
//! For a datapoint `x` the weight of interpolation point `j` is
//! `σ_j(x) = softmax_j(−‖x/T_j − z_j‖)`, where the division is elementwise.
//! The interpolation operator stacks, for every datapoint, the weight row
//! followed by the `d` rows of its input gradient.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Default stabilizer added to the distance in the gradient denominator.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Points processed per parallel work item; fixed so reductions are reproducible.
const CHUNK: usize = 64;

/// Interpolation points and their temperatures, both `m × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpField {
    pub points: DMatrix<f64>,
    pub temperatures: DMatrix<f64>,
    pub eps: f64,
    /// When set, every row of `temperatures` is the same vector (the original
    /// single-temperature scheme).
    pub shared_temperature: bool,
}

impl InterpField {
    pub fn new(points: DMatrix<f64>, temperatures: DMatrix<f64>) -> Self {
        assert_eq!(points.shape(), temperatures.shape());
        InterpField {
            points,
            temperatures,
            eps: DEFAULT_EPS,
            shared_temperature: false,
        }
    }

    /// Single temperature vector `t` shared by all points.
    pub fn with_shared_temperature(points: DMatrix<f64>, t: &[f64]) -> Self {
        let m = points.nrows();
        assert_eq!(points.ncols(), t.len());
        let temperatures = DMatrix::from_fn(m, t.len(), |_, k| t[k]);
        InterpField {
            points,
            temperatures,
            eps: DEFAULT_EPS,
            shared_temperature: true,
        }
    }

    pub fn num_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Which label channels a datapoint contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observations {
    ValuesAndGradients,
    ValuesOnly,
}

impl Observations {
    pub fn rows_per_point(self, d: usize) -> usize {
        match self {
            Observations::ValuesAndGradients => d + 1,
            Observations::ValuesOnly => 1,
        }
    }

    pub fn with_gradients(self) -> bool {
        matches!(self, Observations::ValuesAndGradients)
    }
}

/// Row-major copies of the field for the inner loops.
struct FieldRows {
    m: usize,
    d: usize,
    z: Vec<f64>,
    t: Vec<f64>,
    eps: f64,
}

impl FieldRows {
    fn new(field: &InterpField) -> Self {
        let (m, d) = field.points.shape();
        let mut z = Vec::with_capacity(m * d);
        let mut t = Vec::with_capacity(m * d);
        for j in 0..m {
            for k in 0..d {
                z.push(field.points[(j, k)]);
                t.push(field.temperatures[(j, k)]);
            }
        }
        FieldRows {
            m,
            d,
            z,
            t,
            eps: field.eps,
        }
    }
}

/// Per-datapoint intermediate quantities, reused across points.
struct PointState {
    /// `x/T_j − z_j`, row-major `m × d`.
    r: Vec<f64>,
    norm: Vec<f64>,
    sigma: Vec<f64>,
    /// `∇_x a_j`, row-major `m × d`.
    g: Vec<f64>,
    /// `Σ_j σ_j ∇_x a_j`.
    gbar: Vec<f64>,
}

impl PointState {
    fn new(m: usize, d: usize) -> Self {
        PointState {
            r: vec![0.0; m * d],
            norm: vec![0.0; m],
            sigma: vec![0.0; m],
            g: vec![0.0; m * d],
            gbar: vec![0.0; d],
        }
    }

    fn forward(&mut self, x: &[f64], f: &FieldRows) {
        let (m, d) = (f.m, f.d);
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..m {
            let mut sq = 0.0;
            for k in 0..d {
                let idx = j * d + k;
                let r = x[k] / f.t[idx] - f.z[idx];
                self.r[idx] = r;
                sq += r * r;
            }
            let n = sq.sqrt();
            self.norm[j] = n;
            max_logit = max_logit.max(-n);
        }
        let mut total = 0.0;
        for j in 0..m {
            let e = (-self.norm[j] - max_logit).exp();
            self.sigma[j] = e;
            total += e;
        }
        for s in &mut self.sigma {
            *s /= total;
        }
        self.gbar.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..m {
            let denom = self.norm[j] + f.eps;
            for k in 0..d {
                let idx = j * d + k;
                let g = -self.r[idx] / (f.t[idx] * denom);
                self.g[idx] = g;
                self.gbar[k] += self.sigma[j] * g;
            }
        }
    }

    /// `∂σ_j/∂x_k = σ_j (g_jk − ḡ_k)`.
    fn grad_entry(&self, j: usize, k: usize, d: usize) -> f64 {
        self.sigma[j] * (self.g[j * d + k] - self.gbar[k])
    }

    /// Accumulates into `zbar`/`tbar` the gradient of
    /// `Σ_j vbar_j σ_j + Σ_jk wbar_jk ∂σ_j/∂x_k` for this datapoint.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        x: &[f64],
        f: &FieldRows,
        vbar: &[f64],
        wbar: Option<&[f64]>,
        zbar: &mut [f64],
        tbar: &mut [f64],
        scratch: &mut Scratch,
    ) {
        let (m, d) = (f.m, f.d);
        let sbar = &mut scratch.sbar;
        let wmean = &mut scratch.wmean;
        wmean.iter_mut().for_each(|v| *v = 0.0);
        if let Some(w) = wbar {
            for j in 0..m {
                for k in 0..d {
                    wmean[k] += self.sigma[j] * w[j * d + k];
                }
            }
        }
        // Adjoint of σ_j through both the value row and the gradient rows.
        let mut weighted = 0.0;
        for j in 0..m {
            let mut s = vbar[j];
            if let Some(w) = wbar {
                for k in 0..d {
                    let idx = j * d + k;
                    s += w[idx] * (self.g[idx] - self.gbar[k]) - wmean[k] * self.g[idx];
                }
            }
            sbar[j] = s;
            weighted += self.sigma[j] * s;
        }
        for j in 0..m {
            let abar = self.sigma[j] * (sbar[j] - weighted);
            let n = self.norm[j];
            let denom = n + f.eps;
            let inv_n = if n > 0.0 { 1.0 / n } else { 0.0 };
            // Σ_k Ḡ_jk r_jk / T_jk with Ḡ_j = σ_j (W_j − w̄).
            let mut proj = 0.0;
            if let Some(w) = wbar {
                for k in 0..d {
                    let idx = j * d + k;
                    let gadj = self.sigma[j] * (w[idx] - wmean[k]);
                    proj += gadj * self.r[idx] / f.t[idx];
                }
            }
            for k in 0..d {
                let idx = j * d + k;
                let r = self.r[idx];
                let t = f.t[idx];
                let mut rbar = -abar * r * inv_n;
                if let Some(w) = wbar {
                    let gadj = self.sigma[j] * (w[idx] - wmean[k]);
                    rbar += -gadj / (t * denom) + proj / (denom * denom) * r * inv_n;
                    tbar[idx] += gadj * r / (t * t * denom);
                }
                zbar[idx] -= rbar;
                tbar[idx] -= rbar * x[k] / (t * t);
            }
        }
    }
}

struct Scratch {
    sbar: Vec<f64>,
    wmean: Vec<f64>,
}

/// Softmax interpolation weights `σ(x)`, an `m`-vector summing to one.
pub fn softmax_weights(x: &[f64], field: &InterpField) -> DVector<f64> {
    let rows = FieldRows::new(field);
    let mut st = PointState::new(rows.m, rows.d);
    st.forward(x, &rows);
    DVector::from_vec(st.sigma)
}

/// Input gradients of the interpolation weights, `m × d` with row `j` equal to `∇_x σ_j(x)`.
pub fn softmax_weight_grads(x: &[f64], field: &InterpField) -> DMatrix<f64> {
    let rows = FieldRows::new(field);
    let mut st = PointState::new(rows.m, rows.d);
    st.forward(x, &rows);
    DMatrix::from_fn(rows.m, rows.d, |j, k| st.grad_entry(j, k, rows.d))
}

/// Stacked interpolation operator, `n·q × m` with `q` rows per datapoint.
#[derive(Debug, Clone)]
pub struct InterpBlockMatrix {
    pub matrix: DMatrix<f64>,
    pub dim: usize,
    pub observations: Observations,
}

impl InterpBlockMatrix {
    pub fn rows_per_point(&self) -> usize {
        self.observations.rows_per_point(self.dim)
    }

    pub fn num_points(&self) -> usize {
        self.matrix.nrows() / self.rows_per_point().max(1)
    }

    pub fn value_row(&self, i: usize) -> DVector<f64> {
        self.matrix.row(i * self.rows_per_point()).transpose()
    }

    /// `d × m` block of gradient rows for datapoint `i`.
    pub fn gradient_rows(&self, i: usize) -> Option<DMatrix<f64>> {
        self.observations.with_gradients().then(|| {
            let q = self.rows_per_point();
            self.matrix.rows(i * q + 1, self.dim).into_owned()
        })
    }
}

/// Builds the interpolation operator for the rows of `x`.
pub fn assemble_interp(
    x: &DMatrix<f64>,
    field: &InterpField,
    observations: Observations,
) -> InterpBlockMatrix {
    assert_eq!(x.ncols(), field.dim(), "assemble_interp: dimension mismatch");
    let rows = FieldRows::new(field);
    let (n, m, d) = (x.nrows(), rows.m, rows.d);
    let q = observations.rows_per_point(d);
    let with_grad = observations.with_gradients();
    let mut buf = vec![0.0; n * q * m];
    buf.par_chunks_mut(CHUNK * q * m)
        .enumerate()
        .for_each(|(c, chunk)| {
            let mut st = PointState::new(m, d);
            let mut xi = vec![0.0; d];
            for (local, block) in chunk.chunks_mut(q * m).enumerate() {
                let i = c * CHUNK + local;
                for k in 0..d {
                    xi[k] = x[(i, k)];
                }
                st.forward(&xi, &rows);
                block[..m].copy_from_slice(&st.sigma);
                if with_grad {
                    for k in 0..d {
                        let row = &mut block[(k + 1) * m..(k + 2) * m];
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = st.grad_entry(j, k, d);
                        }
                    }
                }
            }
        });
    InterpBlockMatrix {
        matrix: DMatrix::from_row_slice(n * q, m, &buf),
        dim: d,
        observations,
    }
}

/// Gradient of `⟨sbar, Σ̃(x)⟩` with respect to the interpolation points and
/// temperatures (per row; shared temperatures are summed by the caller).
pub(crate) fn interp_vjp(
    x: &DMatrix<f64>,
    field: &InterpField,
    observations: Observations,
    sbar: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = FieldRows::new(field);
    let (n, m, d) = (x.nrows(), rows.m, rows.d);
    let q = observations.rows_per_point(d);
    assert_eq!(sbar.shape(), (n * q, m));
    // Column j of the transpose is row j of sbar, contiguous.
    let st_bar = sbar.transpose();
    let with_grad = observations.with_gradients();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut zbar = vec![0.0; m * d];
            let mut tbar = vec![0.0; m * d];
            let mut st = PointState::new(m, d);
            let mut scratch = Scratch {
                sbar: vec![0.0; m],
                wmean: vec![0.0; d],
            };
            let mut xi = vec![0.0; d];
            let mut wbar = vec![0.0; m * d];
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                for k in 0..d {
                    xi[k] = x[(i, k)];
                }
                st.forward(&xi, &rows);
                let vbar = st_bar.column(i * q);
                let wref = if with_grad {
                    for k in 0..d {
                        let col = st_bar.column(i * q + 1 + k);
                        for j in 0..m {
                            wbar[j * d + k] = col[j];
                        }
                    }
                    Some(wbar.as_slice())
                } else {
                    None
                };
                st.backward(
                    &xi,
                    &rows,
                    vbar.as_slice(),
                    wref,
                    &mut zbar,
                    &mut tbar,
                    &mut scratch,
                );
            }
            (zbar, tbar)
        })
        .collect();
    let mut zbar = vec![0.0; m * d];
    let mut tbar = vec![0.0; m * d];
    for (zp, tp) in partials {
        for (a, b) in zbar.iter_mut().zip(zp) {
            *a += b;
        }
        for (a, b) in tbar.iter_mut().zip(tp) {
            *a += b;
        }
    }
    (
        DMatrix::from_row_slice(m, d, &zbar),
        DMatrix::from_row_slice(m, d, &tbar),
    )
}
