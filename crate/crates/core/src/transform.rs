//! Smooth positivity constraint `value = floor + softplus(raw)`.

pub const KERNEL_FLOOR: f64 = 1e-6;
pub const TEMPERATURE_FLOOR: f64 = 1e-4;
pub const NOISE_FLOOR: f64 = 1e-6;

/// Maps an unconstrained real to `(floor, ∞)`.
pub fn to_positive(raw: f64, floor: f64) -> f64 {
    floor + softplus(raw)
}

/// Inverse of [`to_positive`]; values at or below the floor map to a large negative raw value.
pub fn from_positive(value: f64, floor: f64) -> f64 {
    let excess = (value - floor).max(1e-300);
    if excess > 30.0 {
        excess + (-(-excess).exp()).ln_1p()
    } else {
        excess.exp_m1().ln()
    }
}

/// `d value / d raw`.
pub fn positive_derivative(raw: f64) -> f64 {
    sigmoid(raw)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
