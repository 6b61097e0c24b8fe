//! Brownian-bridge barrier quantities for the continuous Euler scheme.
//!
//! Between two grid dates the continuous Euler scheme is a Brownian motion
//! with drift and frozen volatility, pinned at both ends. Its minimum has the
//! closed-form law `H` below; `G = 1 - H(a)` is the probability of not
//! crossing the lower barrier `a` on the interval.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeParams {
    pub x_left: f64,
    pub x_right: f64,
    /// `dt * sigma(x_left, t_left)^2`.
    pub var: f64,
}

impl BridgeParams {
    pub fn new(x_left: f64, x_right: f64, var: f64) -> Result<Self> {
        let p = Self {
            x_left,
            x_right,
            var,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.var > 0.0) {
            return Err(Error::param("var", format!("must be > 0, got {}", self.var)));
        }
        Ok(())
    }
}

/// `P(min of the pinned bridge <= u)`.
pub fn bridge_min_cdf(p: &BridgeParams, u: f64) -> Result<f64> {
    p.validate()?;
    Ok(min_cdf_unchecked(p.x_left, p.x_right, p.var, u))
}

#[inline]
fn min_cdf_unchecked(x_left: f64, x_right: f64, var: f64, u: f64) -> f64 {
    if u <= x_left.min(x_right) {
        (-2.0 * (u - x_left) * (u - x_right) / var).exp()
    } else {
        1.0
    }
}

/// Probability that the pinned bridge stays above `a`.
pub fn no_cross_factor(p: &BridgeParams, a: f64) -> Result<f64> {
    p.validate()?;
    Ok(no_cross_unchecked(p.x_left, p.x_right, p.var, a))
}

/// [`no_cross_factor`] without parameter validation, for hot loops that have
/// already checked `var > 0`.
#[inline]
pub fn no_cross_unchecked(x_left: f64, x_right: f64, var: f64, a: f64) -> f64 {
    if x_left < a || x_right < a {
        return 0.0;
    }
    // exp underflow for very negative exponents gives exactly 1, the right limit
    -(-2.0 * (x_left - a) * (x_right - a) / var).exp_m1()
}

/// Product of no-crossing factors along `path`, with `vols[k]` the signal
/// volatility at `path[k]` and `steps[k]` the length of interval `k`.
///
/// A path with fewer than two points has an empty product and returns 1
/// unless its single point is already below `a`.
pub fn interval_survival_product(path: &[f64], vols: &[f64], steps: &[f64], a: f64) -> Result<f64> {
    if path.iter().any(|&x| x < a) {
        return Ok(0.0);
    }
    if path.len() < 2 {
        return Ok(1.0);
    }
    let intervals = path.len() - 1;
    if vols.len() < intervals {
        return Err(Error::Shape {
            context: "interval_survival_product vols",
            expected: intervals,
            got: vols.len(),
        });
    }
    if steps.len() != intervals {
        return Err(Error::Shape {
            context: "interval_survival_product steps",
            expected: intervals,
            got: steps.len(),
        });
    }
    let mut prod = 1.0;
    for k in 0..intervals {
        let p = BridgeParams::new(path[k], path[k + 1], steps[k] * vols[k] * vols[k])?;
        prod *= no_cross_unchecked(p.x_left, p.x_right, p.var, a);
        if prod == 0.0 {
            break;
        }
    }
    Ok(prod)
}

/// Inverse of [`bridge_min_cdf`] at `uniform`, i.e. a draw of the bridge
/// minimum when `uniform` is U(0,1).
pub fn sample_interval_min(p: &BridgeParams, uniform: f64) -> Result<f64> {
    p.validate()?;
    if !(uniform > 0.0 && uniform < 1.0) {
        return Err(Error::param("uniform", format!("must lie in (0,1), got {uniform}")));
    }
    let d = p.x_left - p.x_right;
    let disc = d * d - 2.0 * p.var * uniform.ln();
    Ok(0.5 * ((p.x_left + p.x_right) - disc.sqrt()))
}
