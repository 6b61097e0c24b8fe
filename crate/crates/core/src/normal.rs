//! Standard normal helpers with tail-accurate evaluation.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Density of N(0,1).
#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Distribution function of N(0,1).
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)` without cancellation for large `x`.
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Mass of N(0,1) on `[lo, hi]`, evaluated on the tail that keeps precision.
pub fn mass(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return 0.0;
    }
    if lo >= 0.0 {
        (sf(lo) - sf(hi)).max(0.0)
    } else if hi <= 0.0 {
        (cdf(hi) - cdf(lo)).max(0.0)
    } else {
        (1.0 - cdf(lo) - sf(hi)).max(0.0)
    }
}

/// `E[Z 1{lo <= Z <= hi}]` for Z ~ N(0,1).
#[inline]
pub fn partial_first_moment(lo: f64, hi: f64) -> f64 {
    let dens = |x: f64| if x.is_finite() { pdf(x) } else { 0.0 };
    dens(lo) - dens(hi)
}

/// Inverse of [`cdf`] on (0,1).
pub fn inv_cdf(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // one Newton polish; erfc_inv alone is good to ~1e-11
    if x > 0.0 {
        x + (sf(x) - (1.0 - p)) / pdf(x)
    } else {
        x - (cdf(x) - p) / pdf(x)
    }
}
