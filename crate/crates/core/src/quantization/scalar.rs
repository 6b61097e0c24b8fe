//! Optimal quadratic quantizers of the standard normal distribution.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::normal;
use crate::{Error, Result};

const NEWTON_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 200;
const MAX_LLOYD_ITERS: usize = 5_000;
const LLOYD_BATCH: usize = 10;
// a Newton direction needing heavier damping than this is not trusted
const MAX_HALVINGS: usize = 8;

/// Sorted levels of an N-point quantizer of N(0,1) with the Gaussian masses
/// of their Voronoi cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    pub levels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ScalarQuantizer {
    /// Builds the quantizer for `levels` (sorted), with weights set to the
    /// Voronoi cell masses.
    pub fn from_levels(levels: Vec<f64>) -> Self {
        let weights = cells(&levels).map(|(lo, hi)| normal::mass(lo, hi)).collect();
        Self { levels, weights }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `E|Z - proj(Z)|^2` computed cell by cell.
    pub fn distortion(&self) -> f64 {
        // per cell: E[(Z-x)^2; C] = E[Z^2; C] - 2x E[Z; C] + x^2 P(C)
        cells(&self.levels)
            .zip(&self.levels)
            .map(|((lo, hi), &x)| {
                let p = normal::mass(lo, hi);
                let m1 = normal::partial_first_moment(lo, hi);
                let m2 = p + edge_term(lo) - edge_term(hi);
                m2 - 2.0 * x * m1 + x * x * p
            })
            .sum()
    }

    /// `max_i |E[Z | Z in C_i] - level_i|`.
    pub fn centroid_residual(&self) -> f64 {
        cells(&self.levels)
            .zip(&self.levels)
            .map(|((lo, hi), &x)| {
                (normal::partial_first_moment(lo, hi) / normal::mass(lo, hi) - x).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `x phi(x)`, zero at infinity; `E[Z^2; lo<Z<hi] = P + lo phi(lo) - hi phi(hi)`.
fn edge_term(x: f64) -> f64 {
    if x.is_finite() { x * normal::pdf(x) } else { 0.0 }
}

/// Voronoi cell edges `(lo, hi)` of sorted levels.
fn cells(levels: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    let n = levels.len();
    (0..n).map(move |i| {
        let lo = if i == 0 {
            f64::NEG_INFINITY
        } else {
            0.5 * (levels[i - 1] + levels[i])
        };
        let hi = if i + 1 == n {
            f64::INFINITY
        } else {
            0.5 * (levels[i] + levels[i + 1])
        };
        (lo, hi)
    })
}

/// Gradient (up to a factor 2) of the distortion: `x_i P_i - E[Z; C_i]`.
fn gradient(levels: &[f64]) -> Vec<f64> {
    cells(levels)
        .zip(levels)
        .map(|((lo, hi), &x)| x * normal::mass(lo, hi) - normal::partial_first_moment(lo, hi))
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Solves the symmetric tridiagonal system `(diag, off) x = rhs` in place
/// (Thomas algorithm). `off[i]` couples unknowns `i` and `i+1`.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    if d == 0.0 {
        return false;
    }
    for i in 0..n {
        if i > 0 {
            d = diag[i] - off[i - 1] * c[i - 1];
            if d == 0.0 || !d.is_finite() {
                return false;
            }
            rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / d;
        } else {
            rhs[0] /= d;
        }
        if i + 1 < n {
            c[i] = off[i] / d;
        }
    }
    for i in (0..n.saturating_sub(1)).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    true
}

fn is_sorted_strict(levels: &[f64]) -> bool {
    levels.windows(2).all(|w| w[0] < w[1]) && levels.iter().all(|x| x.is_finite())
}

fn lloyd_sweep(levels: &mut [f64]) {
    let next: Vec<f64> = cells(levels)
        .map(|(lo, hi)| normal::partial_first_moment(lo, hi) / normal::mass(lo, hi))
        .collect();
    levels.copy_from_slice(&next);
}

fn symmetrize(levels: &mut [f64]) {
    let n = levels.len();
    for i in 0..n / 2 {
        let v = 0.5 * (levels[n - 1 - i] - levels[i]);
        levels[i] = -v;
        levels[n - 1 - i] = v;
    }
    if n % 2 == 1 {
        levels[n / 2] = 0.0;
    }
}

/// Damped Newton iterations on the stationarity equations. Returns the final
/// gradient norm and whether the step size fell below tolerance.
fn newton(levels: &mut Vec<f64>) -> (f64, bool) {
    let n = levels.len();
    let mut grad = gradient(levels);
    let mut res = max_abs(&grad);
    for _ in 0..MAX_NEWTON_ITERS {
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for (i, (lo, hi)) in cells(levels).enumerate() {
            let p = normal::mass(lo, hi);
            let left = if i > 0 {
                0.25 * normal::pdf(lo) * (levels[i] - levels[i - 1])
            } else {
                0.0
            };
            let right = if i + 1 < n {
                0.25 * normal::pdf(hi) * (levels[i + 1] - levels[i])
            } else {
                0.0
            };
            diag[i] = p - left - right;
            if i + 1 < n {
                off[i] = -right;
            }
        }
        let mut step = grad.clone();
        if !solve_tridiagonal(&diag, &off, &mut step) {
            return (res, false);
        }
        let step_size = max_abs(&step);
        let merit = ScalarQuantizer::from_levels(levels.clone()).distortion();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = levels.iter().zip(&step).map(|(x, s)| x - scale * s).collect();
            // the distortion, not the gradient norm, is the merit: the
            // gradient also vanishes on grids pushed out into the tails
            if is_sorted_strict(&trial)
                && ScalarQuantizer::from_levels(trial.clone()).distortion() <= merit * (1.0 + 1e-13)
            {
                grad = gradient(&trial);
                res = max_abs(&grad);
                *levels = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // no descent along the Newton direction: hand over to Lloyd
            return (res, false);
        }
        if step_size * scale < NEWTON_TOL {
            return (res, true);
        }
    }
    (res, false)
}

/// Stationary (optimal) quadratic N-quantizer of N(0,1).
///
/// Newton's method on the centroid conditions, started from the companding
/// guess `sqrt(3) Phi^{-1}((i - 1/2)/N)`; if Newton stalls, Lloyd sweeps
/// move the grid closer and Newton is retried.
pub fn optimal_gaussian_quantizer(size: usize) -> Result<ScalarQuantizer> {
    if size == 0 {
        return Err(Error::param("N", "quantizer size must be >= 1"));
    }
    if size == 1 {
        return Ok(ScalarQuantizer {
            levels: vec![0.0],
            weights: vec![1.0],
        });
    }
    let mut levels: Vec<f64> = (0..size)
        .map(|i| 3f64.sqrt() * normal::inv_cdf((i as f64 + 0.5) / size as f64))
        .collect();
    symmetrize(&mut levels);

    let mut iterations = 0;
    let mut residual;
    loop {
        let (res, converged) = newton(&mut levels);
        residual = res;
        if converged || res < 1e-15 {
            break;
        }
        if iterations >= MAX_LLOYD_ITERS {
            return Err(Error::SolverFailure {
                size,
                residual,
                iterations,
            });
        }
        for _ in 0..LLOYD_BATCH {
            lloyd_sweep(&mut levels);
        }
        iterations += LLOYD_BATCH;
    }
    symmetrize(&mut levels);
    let q = ScalarQuantizer::from_levels(levels);
    let centroid = q.centroid_residual();
    if centroid > 1e-8 {
        return Err(Error::SolverFailure {
            size,
            residual: centroid.max(residual),
            iterations,
        });
    }
    Ok(q)
}

/// Memoized optimal quantizers and their distortions by size.
#[derive(Debug, Default)]
pub struct QuantizerTable {
    quantizers: HashMap<usize, ScalarQuantizer>,
    distortions: HashMap<usize, f64>,
}

impl QuantizerTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn quantizer(&mut self, size: usize) -> Result<&ScalarQuantizer> {
        if !self.quantizers.contains_key(&size) {
            let q = optimal_gaussian_quantizer(size)?;
            self.distortions.insert(size, q.distortion());
            self.quantizers.insert(size, q);
        }
        Ok(&self.quantizers[&size])
    }

    pub fn distortion(&mut self, size: usize) -> Result<f64> {
        if let Some(&d) = self.distortions.get(&size) {
            return Ok(d);
        }
        let q = optimal_gaussian_quantizer(size)?;
        let d = q.distortion();
        self.distortions.insert(size, d);
        // large grids are only needed for their distortion
        if size <= 256 {
            self.quantizers.insert(size, q);
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain Lloyd fixed-point iteration, independent of the Newton solver.
    fn lloyd_oracle(size: usize) -> Vec<f64> {
        let mut levels: Vec<f64> = (0..size)
            .map(|i| -3.0 + 6.0 * (i as f64 + 0.5) / size as f64)
            .collect();
        for _ in 0..2_000_000 {
            let prev = levels.clone();
            lloyd_sweep(&mut levels);
            let moved = levels.iter().zip(&prev).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            if moved < 1e-14 {
                break;
            }
        }
        levels
    }

    #[test]
    fn trivial_sizes() {
        let q = optimal_gaussian_quantizer(1).unwrap();
        assert_eq!(q.levels, vec![0.0]);
        assert_eq!(q.weights, vec![1.0]);
        assert!((q.distortion() - 1.0).abs() < 1e-15);

        let q = optimal_gaussian_quantizer(2).unwrap();
        let x = (2.0 / std::f64::consts::PI).sqrt();
        assert!((q.levels[1] - x).abs() < 1e-12);
        assert!((q.levels[0] + x).abs() < 1e-12);
        assert!((q.weights[0] - 0.5).abs() < 1e-15);
        assert!(optimal_gaussian_quantizer(0).is_err());
    }

    #[test]
    fn newton_agrees_with_lloyd_at_23() {
        let q = optimal_gaussian_quantizer(23).unwrap();
        let oracle = lloyd_oracle(23);
        for (a, b) in q.levels.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let d22 = optimal_gaussian_quantizer(22).unwrap().distortion();
        assert!(q.distortion() < d22);
    }

    #[test]
    fn invariants_up_to_fifty() {
        let mut prev = f64::INFINITY;
        for n in 1..=50 {
            let q = optimal_gaussian_quantizer(n).unwrap();
            assert!(q.levels.windows(2).all(|w| w[0] < w[1]));
            assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.weights.iter().all(|&w| w > 0.0));
            assert!(q.centroid_residual() < 1e-8, "N={n}");
            for i in 0..n {
                assert!((q.levels[i] + q.levels[n - 1 - i]).abs() < 1e-12);
            }
            let d = q.distortion();
            // stationarity: D = 1 - sum w x^2
            let alt = 1.0 - q.weights.iter().zip(&q.levels).map(|(w, x)| w * x * x).sum::<f64>();
            assert!((d - alt).abs() < 1e-8, "N={n}: {d} vs {alt}");
            // gradient is zero
            assert!(max_abs(&gradient(&q.levels)) < 1e-10);
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn large_sizes_converge() {
        for n in [200, 966, 2500] {
            let q = optimal_gaussian_quantizer(n).unwrap();
            // Zador asymptotics: N^2 D(N) -> pi sqrt(3) / 2
            let zador = q.distortion() * (n * n) as f64;
            assert!((zador - std::f64::consts::PI * 3f64.sqrt() / 2.0).abs() < 0.05, "{zador}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn table_matches_direct(n in 1usize..120) {
            let mut t = QuantizerTable::new();
            let d = t.distortion(n).unwrap();
            prop_assert_eq!(d, optimal_gaussian_quantizer(n).unwrap().distortion());
        }
    }
}
