//! Derivative-labelled datasets: synthetic test functions, normalization,
//! splitting and a plain-text file format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs, values and gradient labels for `n` points in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDerivDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub dy: DMatrix<f64>,
}

impl LabeledDerivDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, dy: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() || dy.shape() != x.shape() {
            return Err(Error::DimensionMismatch(format!(
                "inputs {:?}, values {}, gradients {:?}",
                x.shape(),
                y.len(),
                dy.shape()
            )));
        }
        Ok(LabeledDerivDataset { x, y, dy })
    }

    pub fn empty(d: usize) -> Self {
        LabeledDerivDataset {
            x: DMatrix::zeros(0, d),
            y: DVector::zeros(0),
            dy: DMatrix::zeros(0, d),
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Labels interleaved per point: `[y_0, dy_0, y_1, dy_1, …]`.
    pub fn stacked_labels(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(self.len() * (d + 1));
        for i in 0..self.len() {
            out[i * (d + 1)] = self.y[i];
            for k in 0..d {
                out[i * (d + 1) + 1 + k] = self.dy[(i, k)];
            }
        }
        out
    }

    /// Rows in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        LabeledDerivDataset {
            x: DMatrix::from_fn(idx.len(), d, |r, c| self.x[(idx[r], c)]),
            y: DVector::from_fn(idx.len(), |r, _| self.y[idx[r]]),
            dy: DMatrix::from_fn(idx.len(), d, |r, c| self.dy[(idx[r], c)]),
        }
    }

    pub fn rows(&self, start: usize, len: usize) -> Self {
        LabeledDerivDataset {
            x: self.x.rows(start, len).into_owned(),
            y: self.y.rows(start, len).into_owned(),
            dy: self.dy.rows(start, len).into_owned(),
        }
    }
}

/// The synthetic benchmark functions with analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Branin,
    SixHumpCamel,
    StyblinskiTang,
    Hartmann6,
    Welch20,
}

impl TestFunction {
    pub const ALL: [TestFunction; 5] = [
        TestFunction::Branin,
        TestFunction::SixHumpCamel,
        TestFunction::StyblinskiTang,
        TestFunction::Hartmann6,
        TestFunction::Welch20,
    ];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "branin" => Ok(TestFunction::Branin),
            "six_hump_camel" => Ok(TestFunction::SixHumpCamel),
            "styblinski_tang" => Ok(TestFunction::StyblinskiTang),
            "hartmann6" | "hartmann" => Ok(TestFunction::Hartmann6),
            "welch20" | "welch" => Ok(TestFunction::Welch20),
            other => Err(Error::UnknownFunction(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Branin => "branin",
            TestFunction::SixHumpCamel => "six_hump_camel",
            TestFunction::StyblinskiTang => "styblinski_tang",
            TestFunction::Hartmann6 => "hartmann6",
            TestFunction::Welch20 => "welch20",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            TestFunction::Branin | TestFunction::SixHumpCamel | TestFunction::StyblinskiTang => 2,
            TestFunction::Hartmann6 => 6,
            TestFunction::Welch20 => 20,
        }
    }

    /// Per-coordinate `(low, high)` bounds of the conventional domain.
    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            TestFunction::SixHumpCamel => vec![(-3.0, 3.0), (-2.0, 2.0)],
            TestFunction::StyblinskiTang => vec![(-5.0, 5.0); 2],
            TestFunction::Hartmann6 => vec![(0.0, 1.0); 6],
            TestFunction::Welch20 => vec![(-0.5, 0.5); 20],
        }
    }

    /// Value and gradient at `x`, which must lie inside the domain.
    pub fn eval(self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} takes {} coordinates, got {}",
                self.name(),
                self.dim(),
                x.len()
            )));
        }
        for (k, ((lo, hi), v)) in self.domain().iter().zip(x).enumerate() {
            let slack = 1e-12 * (hi - lo);
            if !(*v >= lo - slack && *v <= hi + slack) {
                return Err(Error::DomainViolation {
                    name: self.name().to_string(),
                    coord: k,
                });
            }
        }
        Ok(match self {
            TestFunction::Branin => branin(x),
            TestFunction::SixHumpCamel => six_hump_camel(x),
            TestFunction::StyblinskiTang => styblinski_tang(x),
            TestFunction::Hartmann6 => hartmann6(x),
            TestFunction::Welch20 => welch20(x),
        })
    }
}

/// Evaluates the named test function.
pub fn synth_eval(name: &str, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    TestFunction::from_name(name)?.eval(x)
}

fn branin(x: &[f64]) -> (f64, Vec<f64>) {
    use std::f64::consts::PI;
    let (a, b, c, r, s, t) = (
        1.0,
        5.1 / (4.0 * PI * PI),
        5.0 / PI,
        6.0,
        10.0,
        1.0 / (8.0 * PI),
    );
    let u = x[1] - b * x[0] * x[0] + c * x[0] - r;
    let f = a * u * u + s * (1.0 - t) * x[0].cos() + s;
    let g0 = 2.0 * a * u * (c - 2.0 * b * x[0]) - s * (1.0 - t) * x[0].sin();
    let g1 = 2.0 * a * u;
    (f, vec![g0, g1])
}

fn six_hump_camel(x: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (x[0], x[1]);
    let a2 = a * a;
    let b2 = b * b;
    let f = (4.0 - 2.1 * a2 + a2 * a2 / 3.0) * a2 + a * b + (-4.0 + 4.0 * b2) * b2;
    let ga = 8.0 * a - 8.4 * a2 * a + 2.0 * a2 * a2 * a + b;
    let gb = a - 8.0 * b + 16.0 * b2 * b;
    (f, vec![ga, gb])
}

fn styblinski_tang(x: &[f64]) -> (f64, Vec<f64>) {
    let f = 0.5
        * x.iter()
            .map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v)
            .sum::<f64>();
    let g = x.iter().map(|v| 2.0 * v.powi(3) - 16.0 * v + 2.5).collect();
    (f, g)
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann6(x: &[f64]) -> (f64, Vec<f64>) {
    let mut f = 0.0;
    let mut g = vec![0.0; 6];
    for i in 0..4 {
        let inner: f64 = (0..6)
            .map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2))
            .sum();
        let e = HARTMANN_ALPHA[i] * (-inner).exp();
        f -= e;
        for j in 0..6 {
            g[j] += e * 2.0 * HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]);
        }
    }
    (f, g)
}

fn welch20(x: &[f64]) -> (f64, Vec<f64>) {
    // Coordinates are 1-indexed in the usual statement of this function.
    let v = |i: usize| x[i - 1];
    let f = 5.0 * v(12) / (1.0 + v(1)) + 5.0 * (v(4) - v(20)).powi(2) + v(5) + 40.0 * v(19).powi(3)
        - 5.0 * v(19)
        + 0.05 * v(2)
        + 0.08 * v(3)
        - 0.03 * v(6)
        + 0.03 * v(7)
        - 0.09 * v(9)
        - 0.01 * v(10)
        - 0.07 * v(11)
        + 0.25 * v(13).powi(2)
        - 0.04 * v(14)
        + 0.06 * v(15)
        - 0.01 * v(17)
        - 0.03 * v(18);
    let mut g = vec![0.0; 20];
    let mut set = |i: usize, val: f64| g[i - 1] = val;
    set(1, -5.0 * v(12) / (1.0 + v(1)).powi(2));
    set(2, 0.05);
    set(3, 0.08);
    set(4, 10.0 * (v(4) - v(20)));
    set(5, 1.0);
    set(6, -0.03);
    set(7, 0.03);
    set(9, -0.09);
    set(10, -0.01);
    set(11, -0.07);
    set(12, 5.0 / (1.0 + v(1)));
    set(13, 0.5 * v(13));
    set(14, -0.04);
    set(15, 0.06);
    set(17, -0.01);
    set(18, -0.03);
    set(19, 120.0 * v(19).powi(2) - 5.0);
    set(20, -10.0 * (v(4) - v(20)));
    (f, g)
}

/// Samples `n` points uniformly over the domain of `name`.
pub fn generate(name: &str, n: usize, seed: u64) -> Result<LabeledDerivDataset> {
    let func = TestFunction::from_name(name)?;
    let d = func.dim();
    let domain = func.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut dy = DMatrix::zeros(n, d);
    let mut point = vec![0.0; d];
    for i in 0..n {
        for (k, (lo, hi)) in domain.iter().enumerate() {
            point[k] = rng.random_range(*lo..*hi);
            x[(i, k)] = point[k];
        }
        let (v, g) = func.eval(&point)?;
        y[i] = v;
        for k in 0..d {
            dy[(i, k)] = g[k];
        }
    }
    LabeledDerivDataset::new(x, y, dy)
}

/// How raw inputs are mapped before modelling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InputTransform {
    /// Per-dimension min/max map of the training inputs onto `[0, 1]`.
    Hypercube,
    /// Divide every coordinate by a constant (e.g. 3 for Cartesian coordinates).
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOptions {
    pub inputs: InputTransform,
    /// Apply a unit scale floor to constant input dimensions instead of failing.
    pub allow_degenerate: bool,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions {
            inputs: InputTransform::Hypercube,
            allow_degenerate: false,
        }
    }
}

/// Affine input map plus value centering/scaling, fit on training data.
///
/// Normalized quantities are `x' = (x − offset) / scale`, `y' = (y − mean) / std`
/// and `dy'_k = dy_k · scale_k / std`, so `dy'` is the gradient of `y'` in `x'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl NormTransform {
    pub fn identity(d: usize) -> Self {
        NormTransform {
            offsets: vec![0.0; d],
            scales: vec![1.0; d],
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    pub fn fit(train: &LabeledDerivDataset, opts: NormOptions) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidConfig(
                "cannot normalize an empty training set".into(),
            ));
        }
        let d = train.dim();
        let (offsets, scales) = match opts.inputs {
            InputTransform::Hypercube => {
                let mut offsets = Vec::with_capacity(d);
                let mut scales = Vec::with_capacity(d);
                for k in 0..d {
                    let col = train.x.column(k);
                    let (lo, hi) = (col.min(), col.max());
                    let mut scale = hi - lo;
                    if !(scale > 0.0) {
                        if !opts.allow_degenerate {
                            return Err(Error::DegenerateDimension { dim: k });
                        }
                        log::warn!("input dimension {k} is constant; using unit scale");
                        scale = 1.0;
                    }
                    offsets.push(lo);
                    scales.push(scale);
                }
                (offsets, scales)
            }
            InputTransform::Scale(s) => (vec![0.0; d], vec![s; d]),
        };
        let n = train.len() as f64;
        let mean = train.y.sum() / n;
        // Pooled spread of centered values together with raw gradient components.
        let pooled: Vec<f64> = train
            .y
            .iter()
            .map(|v| v - mean)
            .chain(train.dy.iter().copied())
            .collect();
        let pm = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let var = pooled.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / pooled.len() as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(NormTransform {
            offsets,
            scales,
            mean,
            std,
        })
    }

    pub fn apply_inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| {
            (x[(i, k)] - self.offsets[k]) / self.scales[k]
        })
    }

    pub fn invert_inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| {
            x[(i, k)] * self.scales[k] + self.offsets[k]
        })
    }

    pub fn apply(&self, ds: &LabeledDerivDataset) -> LabeledDerivDataset {
        LabeledDerivDataset {
            x: self.apply_inputs(&ds.x),
            y: ds.y.map(|v| (v - self.mean) / self.std),
            dy: DMatrix::from_fn(ds.len(), ds.dim(), |i, k| {
                ds.dy[(i, k)] * self.scales[k] / self.std
            }),
        }
    }

    pub fn invert(&self, ds: &LabeledDerivDataset) -> LabeledDerivDataset {
        LabeledDerivDataset {
            x: self.invert_inputs(&ds.x),
            y: ds.y.map(|v| self.invert_value(v)),
            dy: DMatrix::from_fn(ds.len(), ds.dim(), |i, k| {
                self.invert_gradient(ds.dy[(i, k)], k)
            }),
        }
    }

    pub fn invert_value(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn invert_gradient(&self, g: f64, k: usize) -> f64 {
        g * self.std / self.scales[k]
    }

    /// Variance of a normalized value mapped to raw units.
    pub fn invert_value_variance(&self, v: f64) -> f64 {
        v * self.std * self.std
    }

    pub fn invert_gradient_variance(&self, v: f64, k: usize) -> f64 {
        let s = self.std / self.scales[k];
        v * s * s
    }
}

/// Fits the transform on `train` and applies it to `train` and every entry of `others`.
pub fn normalize(
    train: &LabeledDerivDataset,
    others: &[&LabeledDerivDataset],
    opts: NormOptions,
) -> Result<(NormTransform, LabeledDerivDataset, Vec<LabeledDerivDataset>)> {
    let t = NormTransform::fit(train, opts)?;
    let train_n = t.apply(train);
    let rest = others.iter().map(|ds| t.apply(ds)).collect();
    Ok((t, train_n, rest))
}

/// Seeded random split into `n_train` training rows and the rest.
pub fn split(
    ds: &LabeledDerivDataset,
    n_train: usize,
    seed: u64,
) -> Result<(LabeledDerivDataset, LabeledDerivDataset)> {
    if n_train > ds.len() {
        return Err(Error::InvalidConfig(format!(
            "n_train = {n_train} exceeds dataset size {}",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((ds.select(&idx[..n_train]), ds.select(&idx[n_train..])))
}

/// Renders the dataset in the text format read by [`load`].
pub fn to_csv(ds: &LabeledDerivDataset) -> String {
    let d = ds.dim();
    let mut out = format!("# d={} n={}\n", d, ds.len());
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    header.extend((1..=d).map(|k| format!("dy{k}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.len() {
        let mut fields = Vec::with_capacity(2 * d + 1);
        fields.extend(ds.x.row(i).iter().map(|v| v.to_string()));
        fields.push(ds.y[i].to_string());
        fields.extend(ds.dy.row(i).iter().map(|v| v.to_string()));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn save(ds: &LabeledDerivDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), to_csv(ds)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<LabeledDerivDataset> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Parses the dataset text format; line numbers in errors are 1-based.
pub fn parse_csv(text: &str) -> Result<LabeledDerivDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let malformed = |line: usize, reason: String| Error::Malformed { line, reason };
    let (ln, meta) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?;
    let (d, n) = parse_meta(meta).ok_or_else(|| {
        malformed(ln, "expected a `# d=<d> n=<n>` header line".into())
    })?;
    let (ln, header) = lines
        .next()
        .ok_or_else(|| malformed(2, "missing column header".into()))?;
    if header.split(',').count() != 2 * d + 1 {
        return Err(malformed(
            ln,
            format!("column header should list {} columns", 2 * d + 1),
        ));
    }
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != 2 * d + 1 {
            return Err(malformed(
                ln,
                format!("expected {} columns, found {}", 2 * d + 1, values.len()),
            ));
        }
        let mut parsed = Vec::with_capacity(values.len());
        for v in values {
            parsed.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| malformed(ln, format!("`{v}` is not a number")))?,
            );
        }
        x.extend_from_slice(&parsed[..d]);
        y.push(parsed[d]);
        dy.extend_from_slice(&parsed[d + 1..]);
        rows += 1;
    }
    if rows != n {
        return Err(malformed(
            1,
            format!("header announces {n} rows but {rows} were found"),
        ));
    }
    LabeledDerivDataset::new(
        DMatrix::from_row_slice(n, d, &x),
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, d, &dy),
    )
}

fn parse_meta(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut d = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        }
    }
    Some((d?, n?))
}
