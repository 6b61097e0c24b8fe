//! Karhunen-Loeve product quantization of Brownian motion and the induced
//! functional quantization of the signal diffusion.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scalar::{QuantizerTable, ScalarQuantizer};
use crate::models::{DiffusionModel, TimeGrid};
use crate::{Error, Result};

/// RK4 substeps per grid interval when integrating the quantized flow.
pub const ODE_SUBSTEPS: usize = 10;

/// Eigenpair `(lambda_n, e_n)` of the Brownian covariance operator on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlMode {
    pub index: usize,
    pub horizon: f64,
    pub eigenvalue: f64,
}

impl KlMode {
    fn frequency(&self) -> f64 {
        PI * (self.index as f64 - 0.5) / self.horizon
    }

    /// `e_n(t) = sqrt(2/T) sin(pi (n - 1/2) t / T)`.
    pub fn eval(&self, t: f64) -> f64 {
        (2.0 / self.horizon).sqrt() * (self.frequency() * t).sin()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (2.0 / self.horizon).sqrt() * self.frequency() * (self.frequency() * t).cos()
    }
}

pub fn kl_eigenpair(index: usize, horizon: f64) -> Result<KlMode> {
    if index == 0 {
        return Err(Error::param("n", "KL modes are indexed from 1"));
    }
    if !(horizon > 0.0) {
        return Err(Error::param("T", format!("horizon must be > 0, got {horizon}")));
    }
    let eigenvalue = (horizon / (PI * (index as f64 - 0.5))).powi(2);
    Ok(KlMode {
        index,
        horizon,
        eigenvalue,
    })
}

/// `sum_{n > d} lambda_n = T^2/2 - sum_{n <= d} lambda_n`.
fn eigen_tail(first: usize, horizon: f64) -> f64 {
    let head: f64 = (1..first)
        .map(|n| (horizon / (PI * (n as f64 - 0.5))).powi(2))
        .sum();
    (0.5 * horizon * horizon - head).max(0.0)
}

/// Squared L2 path error of the product quantizer with coordinate sizes
/// `sizes`: `sum_n lambda_n D(N_n) + sum_{n > d} lambda_n`.
pub fn product_distortion(sizes: &[usize], horizon: f64, table: &mut QuantizerTable) -> Result<f64> {
    let mut total = eigen_tail(sizes.len() + 1, horizon);
    for (i, &s) in sizes.iter().enumerate() {
        total += kl_eigenpair(i + 1, horizon)?.eigenvalue * table.distortion(s)?;
    }
    Ok(total)
}

/// Size decomposition `N_1 >= N_2 >= .. >= 2` with `prod N_n <= budget`
/// minimizing the product-quantizer distortion.
pub fn allocate_sizes(budget: usize, horizon: f64) -> Result<Vec<usize>> {
    let mut table = QuantizerTable::new();
    allocate_sizes_with(budget, horizon, &mut table)
}

pub fn allocate_sizes_with(budget: usize, horizon: f64, table: &mut QuantizerTable) -> Result<Vec<usize>> {
    if budget == 0 {
        return Err(Error::param("N", "budget must be >= 1"));
    }
    if !(horizon > 0.0) {
        return Err(Error::param("T", format!("horizon must be > 0, got {horizon}")));
    }
    // ordering of decompositions does not depend on T; search at T = 1
    let lambdas: Vec<f64> = (1..=64).map(|n| (1.0 / (PI * (n as f64 - 0.5))).powi(2)).collect();
    let tails: Vec<f64> = (0..=64).map(|d| eigen_tail(d + 1, 1.0)).collect();

    struct Search<'a> {
        lambdas: &'a [f64],
        tails: &'a [f64],
        table: &'a mut QuantizerTable,
        best: f64,
        best_sizes: Vec<usize>,
        current: Vec<usize>,
    }

    impl Search<'_> {
        fn visit(&mut self, cost: f64, budget: usize, cap: usize) -> Result<()> {
            let depth = self.current.len();
            let stop = cost + self.tails[depth];
            if stop < self.best || (stop == self.best && depth < self.best_sizes.len()) {
                self.best = stop;
                self.best_sizes = self.current.clone();
            }
            let max_size = cap.min(budget);
            if max_size < 2 || depth >= self.lambdas.len() {
                return Ok(());
            }
            for size in 2..=max_size {
                // coordinates reachable after this one: floor(log2(budget / size))
                let rest = budget / size;
                let more = usize::BITS as usize - 1 - rest.leading_zeros() as usize;
                let bound = cost + self.tails[(depth + 1 + more).min(self.tails.len() - 1)];
                if bound >= self.best {
                    // bound is nondecreasing in size
                    break;
                }
                let term = self.lambdas[depth] * self.table.distortion(size)?;
                if cost + term + self.tails[(depth + 1 + more).min(self.tails.len() - 1)] >= self.best {
                    continue;
                }
                self.current.push(size);
                self.visit(cost + term, rest, size)?;
                self.current.pop();
            }
            Ok(())
        }
    }

    let mut search = Search {
        lambdas: &lambdas,
        tails: &tails,
        table,
        best: f64::INFINITY,
        best_sizes: Vec::new(),
        current: Vec::new(),
    };
    search.visit(0.0, budget, budget)?;
    Ok(search.best_sizes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductQuantizer {
    pub sizes: Vec<usize>,
    pub quantizers: Vec<ScalarQuantizer>,
    pub eigenvalues: Vec<f64>,
    pub horizon: f64,
}

impl ProductQuantizer {
    /// Optimal product quantizer of Brownian motion on `[0, horizon]` with at
    /// most `budget` paths.
    pub fn optimal(budget: usize, horizon: f64) -> Result<Self> {
        let mut table = QuantizerTable::new();
        let sizes = allocate_sizes_with(budget, horizon, &mut table)?;
        Self::with_sizes(&sizes, horizon, &mut table)
    }

    pub fn with_sizes(sizes: &[usize], horizon: f64, table: &mut QuantizerTable) -> Result<Self> {
        let quantizers = sizes
            .iter()
            .map(|&s| table.quantizer(s).cloned())
            .collect::<Result<Vec<_>>>()?;
        let eigenvalues = (1..=sizes.len())
            .map(|n| kl_eigenpair(n, horizon).map(|m| m.eigenvalue))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sizes: sizes.to_vec(),
            quantizers,
            eigenvalues,
            horizon,
        })
    }

    /// Number of codebook paths `d_N = prod N_n`.
    pub fn codebook_size(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Squared L2 path error `E |W - W^|^2_{L2[0,T]}`.
    pub fn distortion(&self) -> f64 {
        let head: f64 = self
            .eigenvalues
            .iter()
            .zip(&self.quantizers)
            .map(|(l, q)| l * q.distortion())
            .sum();
        head + eigen_tail(self.sizes.len() + 1, self.horizon)
    }

    fn modes(&self) -> Vec<KlMode> {
        (1..=self.sizes.len())
            .map(|n| kl_eigenpair(n, self.horizon).expect("validated at construction"))
            .collect()
    }
}

/// Codebook paths `chi_i(t) = sum_n sqrt(lambda_n) x_{i_n} e_n(t)` with their
/// product weights, evaluated on `t_0..=t_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianCodebook {
    pub horizon: f64,
    /// Per path, the KL coefficients `sqrt(lambda_n) x_{i_n}`.
    pub coefficients: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `paths[i][k] = chi_i(t_k)`.
    pub paths: Vec<Vec<f64>>,
    times: Vec<f64>,
}

impl BrownianCodebook {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn modes(&self) -> Vec<KlMode> {
        let d = self.coefficients.first().map_or(0, Vec::len);
        (1..=d)
            .map(|n| kl_eigenpair(n, self.horizon).expect("validated at construction"))
            .collect()
    }

    pub fn value(&self, path: usize, t: f64) -> f64 {
        self.modes()
            .iter()
            .zip(&self.coefficients[path])
            .map(|(m, c)| c * m.eval(t))
            .sum()
    }

    pub fn derivative(&self, path: usize, t: f64) -> f64 {
        self.modes()
            .iter()
            .zip(&self.coefficients[path])
            .map(|(m, c)| c * m.derivative(t))
            .sum()
    }
}

pub fn brownian_codebook(pq: &ProductQuantizer, grid: &TimeGrid) -> Result<BrownianCodebook> {
    let times = grid.times()[..=grid.m()].to_vec();
    if (grid.observation_horizon() - pq.horizon).abs() > 1e-12 * pq.horizon {
        return Err(Error::InvalidInput(format!(
            "product quantizer horizon {} does not match grid horizon {}",
            pq.horizon,
            grid.observation_horizon()
        )));
    }
    let modes = pq.modes();
    let size = pq.codebook_size();
    let mut coefficients = Vec::with_capacity(size);
    let mut weights = Vec::with_capacity(size);
    // lexicographic multi-index, first coordinate slowest
    let mut index = vec![0usize; pq.sizes.len()];
    for _ in 0..size {
        let mut w = 1.0;
        let mut coef = Vec::with_capacity(index.len());
        for (n, &i) in index.iter().enumerate() {
            let q = &pq.quantizers[n];
            coef.push(pq.eigenvalues[n].sqrt() * q.levels[i]);
            w *= q.weights[i];
        }
        coefficients.push(coef);
        weights.push(w);
        for n in (0..index.len()).rev() {
            index[n] += 1;
            if index[n] < pq.sizes[n] {
                break;
            }
            index[n] = 0;
        }
    }
    let basis: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| modes.iter().map(|m| m.eval(t)).collect())
        .collect();
    let paths = coefficients
        .iter()
        .map(|coef| {
            basis
                .iter()
                .map(|e| coef.iter().zip(e).map(|(c, v)| c * v).sum())
                .collect()
        })
        .collect();
    Ok(BrownianCodebook {
        horizon: pq.horizon,
        coefficients,
        weights,
        paths,
        times,
    })
}

/// Solves `dx = (b - sigma sigma'/2) dt + sigma dchi` from `x0` along every
/// codebook path with fixed-step RK4, returning values at `t_0..=t_m`.
pub fn quantized_diffusion_codebook(
    model: &DiffusionModel,
    codebook: &BrownianCodebook,
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    let times = &grid.times()[..=grid.m()];
    if times.len() != codebook.times().len() {
        return Err(Error::Shape {
            context: "quantized_diffusion_codebook grid",
            expected: codebook.times().len(),
            got: times.len(),
        });
    }
    let modes = codebook.modes();
    (0..codebook.len())
        .into_par_iter()
        .map(|path| {
            let coef = &codebook.coefficients[path];
            let chi_dot = |t: f64| -> f64 { modes.iter().zip(coef).map(|(m, c)| c * m.derivative(t)).sum() };
            let rhs = |x: f64, t: f64| -> f64 {
                let s = model.vol_signal(x, t);
                model.drift_signal(x, t) - 0.5 * s * model.vol_signal_deriv(x, t) + s * chi_dot(t)
            };
            let mut out = Vec::with_capacity(times.len());
            let mut x = model.x0();
            out.push(x);
            for k in 0..times.len() - 1 {
                let h = (times[k + 1] - times[k]) / ODE_SUBSTEPS as f64;
                let mut t = times[k];
                for _ in 0..ODE_SUBSTEPS {
                    let k1 = rhs(x, t);
                    let k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h);
                    let k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h);
                    let k4 = rhs(x + h * k3, t + h);
                    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    t += h;
                }
                if !x.is_finite() {
                    return Err(Error::OdeDiverged { path, step: k + 1 });
                }
                out.push(x);
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Coefficients, SpaceTimeFn};
    use std::sync::Arc;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn kl_examples() {
        let m = kl_eigenpair(1, 1.0).unwrap();
        assert!((m.eigenvalue - 4.0 / (PI * PI)).abs() < 1e-15);
        assert!((m.eigenvalue - 0.405285).abs() < 1e-6);
        for n in 1..8 {
            assert_eq!(kl_eigenpair(n, 2.5).unwrap().eval(0.0), 0.0);
        }
        assert!(kl_eigenpair(0, 1.0).is_err());
        assert!(kl_eigenpair(1, 0.0).is_err());
    }

    #[test]
    fn kl_basis_is_orthonormal() {
        let t = 1.7;
        for n in 1..=6 {
            for m in 1..=6 {
                let (en, em) = (kl_eigenpair(n, t).unwrap(), kl_eigenpair(m, t).unwrap());
                let ip = simpson(|s| en.eval(s) * em.eval(s), 0.0, t, 2000);
                let expect = if n == m { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-6, "<e{n}, e{m}> = {ip}");
            }
        }
    }

    #[test]
    fn eigenvalues_sum_to_path_energy() {
        // E int W^2 = T^2/2 = sum lambda_n
        assert!(eigen_tail(1, 2.0) - 2.0 < 1e-15);
        let partial: f64 = (1..=100_000).map(|n| kl_eigenpair(n, 1.0).unwrap().eigenvalue).sum();
        assert!((partial - 0.5).abs() < 1e-5);
    }

    /// Exhaustive search over all non-increasing tuples, independent of the
    /// branch-and-bound in `allocate_sizes`.
    fn brute_force(budget: usize) -> (Vec<usize>, f64) {
        fn rec(
            budget: usize,
            cap: usize,
            cur: &mut Vec<usize>,
            table: &mut QuantizerTable,
            best: &mut (Vec<usize>, f64),
        ) {
            let d = product_distortion(cur, 1.0, table).unwrap();
            if d < best.1 {
                *best = (cur.clone(), d);
            }
            for s in 2..=cap.min(budget) {
                cur.push(s);
                rec(budget / s, s, cur, table, best);
                cur.pop();
            }
        }
        let mut table = QuantizerTable::new();
        let mut best = (vec![], f64::INFINITY);
        rec(budget, budget, &mut vec![], &mut table, &mut best);
        best
    }

    #[test]
    fn allocation_matches_exhaustive_search() {
        for n in [1usize, 2, 5, 10, 37, 100, 250] {
            let fast = allocate_sizes(n, 1.0).unwrap();
            let (slow, _) = brute_force(n);
            assert_eq!(fast, slow, "budget {n}");
        }
        assert_eq!(allocate_sizes(1, 1.0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn allocation_of_a_thousand_paths() {
        let sizes = allocate_sizes(1000, 1.0).unwrap();
        assert_eq!(sizes, vec![23, 7, 3, 2]);
        assert_eq!(sizes.iter().product::<usize>(), 966);
    }

    #[test]
    fn allocation_distortion_is_monotone() {
        let mut table = QuantizerTable::new();
        for n in [10usize, 100, 1000] {
            let a = allocate_sizes_with(n, 1.0, &mut table).unwrap();
            let b = allocate_sizes_with(2 * n, 1.0, &mut table).unwrap();
            let da = product_distortion(&a, 1.0, &mut table).unwrap();
            let db = product_distortion(&b, 1.0, &mut table).unwrap();
            assert!(db <= da);
        }
    }

    #[test]
    fn path_error_decreases_with_budget() {
        let mut prev = f64::INFINITY;
        for n in [10usize, 100, 1000, 10_000] {
            let pq = ProductQuantizer::optimal(n, 1.0).unwrap();
            assert!(pq.codebook_size() <= n);
            let d = pq.distortion();
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn codebook_properties() {
        let grid = TimeGrid::observation(1.0, 20).unwrap();
        let pq = ProductQuantizer::optimal(200, 1.0).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        assert_eq!(cb.len(), pq.codebook_size());
        assert!((cb.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(cb.paths.iter().all(|p| p[0] == 0.0));
        for (i, p) in cb.paths.iter().enumerate() {
            assert!((p[7] - cb.value(i, grid.times()[7])).abs() < 1e-14);
        }
        // stationarity contraction: E chi(T)^2 <= T
        let second: f64 = cb.weights.iter().zip(&cb.paths).map(|(w, p)| w * p[20] * p[20]).sum();
        assert!(second <= 1.0);

        // grows toward T with the budget
        let big = ProductQuantizer::optimal(10_000, 1.0).unwrap();
        let cb_big = brownian_codebook(&big, &grid).unwrap();
        let second_big: f64 = cb_big.weights.iter().zip(&cb_big.paths).map(|(w, p)| w * p[20] * p[20]).sum();
        assert!(second_big > second && second_big <= 1.0);
    }

    #[test]
    fn median_path_is_zero() {
        let mut table = QuantizerTable::new();
        let pq = ProductQuantizer::with_sizes(&[5, 3], 1.0, &mut table).unwrap();
        let grid = TimeGrid::observation(1.0, 10).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        // index (2, 1) in lexicographic order
        let mid = 2 * 3 + 1;
        assert!(cb.paths[mid].iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn identity_flow_reproduces_chi() {
        let zero: SpaceTimeFn = Arc::new(|_, _| 0.0);
        let one: SpaceTimeFn = Arc::new(|_, _| 1.0);
        let model = DiffusionModel::new(
            Coefficients {
                drift_signal: zero.clone(),
                vol_signal: one.clone(),
                vol_signal_deriv: zero,
                drift_obs: Arc::new(|_, _, _| 0.0),
                vol_obs_shared: one.clone(),
                vol_obs_idio: one,
            },
            0.7,
            0.0,
        );
        let grid = TimeGrid::observation(1.0, 25).unwrap();
        let pq = ProductQuantizer::optimal(300, 1.0).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        let xs = quantized_diffusion_codebook(&model, &cb, &grid).unwrap();
        for (x, chi) in xs.iter().zip(&cb.paths) {
            for (a, b) in x.iter().zip(chi) {
                assert!((a - (0.7 + b)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gbm_flow_matches_closed_form() {
        let (mu, sigma, x0) = (0.03, 0.03, 86.3);
        let model = DiffusionModel::gbm(mu, sigma, 0.1, x0, x0);
        let grid = TimeGrid::observation(1.0, 50).unwrap();
        let pq = ProductQuantizer::optimal(1000, 1.0).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        let xs = quantized_diffusion_codebook(&model, &cb, &grid).unwrap();
        for (x, chi) in xs.iter().zip(&cb.paths) {
            for (k, (&v, &c)) in x.iter().zip(chi).enumerate() {
                let t = grid.times()[k];
                let exact = x0 * ((mu - 0.5 * sigma * sigma) * t + sigma * c).exp();
                assert!(((v - exact) / exact).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ou_zero_path_is_deterministic_flow() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.5, 0.5);
        let grid = TimeGrid::observation(1.0, 10).unwrap();
        let mut table = QuantizerTable::new();
        let pq = ProductQuantizer::with_sizes(&[3], 1.0, &mut table).unwrap();
        let cb = brownian_codebook(&pq, &grid).unwrap();
        let xs = quantized_diffusion_codebook(&model, &cb, &grid).unwrap();
        for (k, &t) in grid.times().iter().enumerate() {
            let exact = 0.35 + (0.5 - 0.35) * (-0.18 * t).exp();
            assert!((xs[1][k] - exact).abs() < 1e-8);
        }
    }
}
