//! Test-set error metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDerivDataset;
use crate::model::{predict, FittedModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rmse(pred: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    ((pred - truth).norm_squared() / pred.len() as f64).sqrt()
}

/// Root of the total squared gradient error over `n·d` components.
pub fn gradient_rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    assert_eq!(pred.shape(), truth.shape());
    if pred.is_empty() {
        return 0.0;
    }
    ((pred - truth).norm_squared() / pred.len() as f64).sqrt()
}

/// Mean negative Gaussian log-density per output.
pub fn gaussian_nll(mean: &[f64], var: &[f64], truth: &[f64]) -> f64 {
    assert!(mean.len() == var.len() && var.len() == truth.len());
    if mean.is_empty() {
        return 0.0;
    }
    let total: f64 = mean
        .iter()
        .zip(var)
        .zip(truth)
        .map(|((m, v), t)| 0.5 * (LN_2PI + v.ln() + (t - m).powi(2) / v))
        .sum();
    total / mean.len() as f64
}

/// Error metrics in one set of units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub value_rmse: f64,
    pub gradient_rmse: f64,
    /// Value-channel NLL with observation noise added to the predictive variance.
    pub nll: f64,
    pub gradient_nll: f64,
}

/// Metrics both in raw units and in the model's normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub raw: MetricSet,
    pub normalized: MetricSet,
    pub n_test: usize,
}

/// Predicts on raw test data and scores values, gradients and NLL.
pub fn evaluate(model: &FittedModel, test: &LabeledDerivDataset) -> Evaluation {
    let n = test.len();
    let d = test.dim();
    let q = d + 1;
    let norm = &model.norm;
    let pred = predict(model, &test.x, true);
    let var = pred.variances.as_ref().expect("variances requested");
    let noise = model.params.noise;

    let raw = {
        let vvar: Vec<f64> = (0..n)
            .map(|i| var[i * q] + norm.invert_value_variance(noise.value))
            .collect();
        let (gm, gv, gt) = gradient_channels(n, d, |i, k| {
            (
                pred.gradients[(i, k)],
                var[i * q + 1 + k] + norm.invert_gradient_variance(noise.gradient, k),
                test.dy[(i, k)],
            )
        });
        MetricSet {
            value_rmse: rmse(&pred.values, &test.y),
            gradient_rmse: gradient_rmse(&pred.gradients, &test.dy),
            nll: gaussian_nll(pred.values.as_slice(), &vvar, test.y.as_slice()),
            gradient_nll: gaussian_nll(&gm, &gv, &gt),
        }
    };

    let normalized = {
        let tn = norm.apply(test);
        let vm: DVector<f64> = pred.values.map(|v| (v - norm.mean) / norm.std);
        let gm = DMatrix::from_fn(n, d, |i, k| pred.gradients[(i, k)] * norm.scales[k] / norm.std);
        let s2 = norm.std * norm.std;
        let vvar: Vec<f64> = (0..n).map(|i| var[i * q] / s2 + noise.value).collect();
        let (gmv, gv, gt) = gradient_channels(n, d, |i, k| {
            let f = norm.scales[k] / norm.std;
            (gm[(i, k)], var[i * q + 1 + k] * f * f + noise.gradient, tn.dy[(i, k)])
        });
        MetricSet {
            value_rmse: rmse(&vm, &tn.y),
            gradient_rmse: gradient_rmse(&gm, &tn.dy),
            nll: gaussian_nll(vm.as_slice(), &vvar, tn.y.as_slice()),
            gradient_nll: gaussian_nll(&gmv, &gv, &gt),
        }
    };

    Evaluation {
        raw,
        normalized,
        n_test: n,
    }
}

fn gradient_channels(
    n: usize,
    d: usize,
    f: impl Fn(usize, usize) -> (f64, f64, f64),
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut m = Vec::with_capacity(n * d);
    let mut v = Vec::with_capacity(n * d);
    let mut t = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..d {
            let (a, b, c) = f(i, k);
            m.push(a);
            v.push(b);
            t.push(c);
        }
    }
    (m, v, t)
}
