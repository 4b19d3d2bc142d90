//! Fixtures shared by the benchmarks.

use dsoftki_core::{DsoftkiParams, GpwdNoise, InterpField, KernelParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random inputs in the unit cube, interleaved labels and parameters.
pub fn fixture(n: usize, m: usize, d: usize) -> (DMatrix<f64>, DVector<f64>, DsoftkiParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut uniform = |rows, cols, lo: f64, hi: f64| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi));
    let x = uniform(n, d, 0.0, 1.0);
    let points = uniform(m, d, 0.0, 1.0);
    let temps = uniform(m, d, 0.5, 1.5);
    let y = DVector::from_fn(n * (d + 1), |i, _| (i as f64 * 0.37).sin());
    let params = DsoftkiParams {
        kernel: KernelParams::isotropic(d, 0.3, 1.0),
        field: InterpField::new(points, temps),
        noise: GpwdNoise::new(0.01, 0.02),
    };
    (x, y, params)
}
