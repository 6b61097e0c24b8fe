//! Signal/observation diffusion pairs, time grids and path simulation.
//!
//! The signal and observation follow
//!
//! ```text
//! dX = b(X,t) dt + sigma(X,t) dW
//! dY = h(Y,X,t) dt + nu(Y,t) dW + delta(Y,t) dW~
//! ```
//!
//! with independent Brownian motions `W` and `W~`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Coefficient evaluated at `(state, t)`.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Observation drift evaluated at `(y, x, t)`.
pub type ObsDriftFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Built-in parametric model families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Preset {
    /// `dX = X(mu dt + sigma dW)`, `dY = Y(r dt + nu dW + delta dW~)`.
    Gbm {
        mu: f64,
        sigma: f64,
        r: f64,
        nu: f64,
        delta: f64,
    },
    /// `dX = lambda(theta - X) dt + sigma dW`,
    /// `dY = lambda(theta - Y) dt + sigma dW + delta dW~`.
    Ou {
        lambda: f64,
        theta: f64,
        sigma: f64,
        delta: f64,
    },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Gbm { .. } => "gbm",
            Preset::Ou { .. } => "ou",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Preset::Gbm {
                mu,
                sigma,
                r,
                nu,
                delta,
            } => {
                finite("mu", mu)?;
                finite("r", r)?;
                positive("sigma", sigma)?;
                positive("nu", nu)?;
                positive("delta", delta)
            }
            Preset::Ou {
                lambda,
                theta,
                sigma,
                delta,
            } => {
                finite("theta", theta)?;
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::param("lambda", "must be finite and >= 0"));
                }
                positive("sigma", sigma)?;
                positive("delta", delta)
            }
        }
    }
}

fn finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {v}")))
    }
}

/// Coefficient functions of a custom model.
#[derive(Clone)]
pub struct Coefficients {
    pub drift_signal: SpaceTimeFn,
    pub vol_signal: SpaceTimeFn,
    /// Spatial derivative of `vol_signal`.
    pub vol_signal_deriv: SpaceTimeFn,
    pub drift_obs: ObsDriftFn,
    pub vol_obs_shared: SpaceTimeFn,
    pub vol_obs_idio: SpaceTimeFn,
}

#[derive(Clone)]
pub struct DiffusionModel {
    coefficients: Coefficients,
    x0: f64,
    y0: f64,
    preset: Option<Preset>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("x0", &self.x0)
            .field("y0", &self.y0)
            .field("preset", &self.preset)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel {
    pub fn new(coefficients: Coefficients, x0: f64, y0: f64) -> Self {
        Self {
            coefficients,
            x0,
            y0,
            preset: None,
        }
    }

    /// Black-Scholes pair with the observation sharing the signal's return
    /// dynamics: `r = mu`, `nu = sigma`.
    pub fn gbm(mu: f64, sigma: f64, delta: f64, x0: f64, y0: f64) -> Self {
        Self::from_preset(
            Preset::Gbm {
                mu,
                sigma,
                r: mu,
                nu: sigma,
                delta,
            },
            x0,
            y0,
        )
    }

    pub fn ou(lambda: f64, theta: f64, sigma: f64, delta: f64, x0: f64, y0: f64) -> Self {
        Self::from_preset(
            Preset::Ou {
                lambda,
                theta,
                sigma,
                delta,
            },
            x0,
            y0,
        )
    }

    pub fn from_preset(preset: Preset, x0: f64, y0: f64) -> Self {
        let coefficients = match preset {
            Preset::Gbm {
                mu,
                sigma,
                r,
                nu,
                delta,
            } => Coefficients {
                drift_signal: Arc::new(move |x, _| mu * x),
                vol_signal: Arc::new(move |x, _| sigma * x),
                vol_signal_deriv: Arc::new(move |_, _| sigma),
                drift_obs: Arc::new(move |y, _, _| r * y),
                vol_obs_shared: Arc::new(move |y, _| nu * y),
                vol_obs_idio: Arc::new(move |y, _| delta * y),
            },
            Preset::Ou {
                lambda,
                theta,
                sigma,
                delta,
            } => Coefficients {
                drift_signal: Arc::new(move |x, _| lambda * (theta - x)),
                vol_signal: Arc::new(move |_, _| sigma),
                vol_signal_deriv: Arc::new(|_, _| 0.0),
                drift_obs: Arc::new(move |y, _, _| lambda * (theta - y)),
                vol_obs_shared: Arc::new(move |_, _| sigma),
                vol_obs_idio: Arc::new(move |_, _| delta),
            },
        };
        Self {
            coefficients,
            x0,
            y0,
            preset: Some(preset),
        }
    }

    pub fn preset(&self) -> Option<&Preset> {
        self.preset.as_ref()
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn with_initial(mut self, x0: f64, y0: f64) -> Self {
        self.x0 = x0;
        self.y0 = y0;
        self
    }

    #[inline]
    pub fn drift_signal(&self, x: f64, t: f64) -> f64 {
        (self.coefficients.drift_signal)(x, t)
    }

    #[inline]
    pub fn vol_signal(&self, x: f64, t: f64) -> f64 {
        (self.coefficients.vol_signal)(x, t)
    }

    #[inline]
    pub fn vol_signal_deriv(&self, x: f64, t: f64) -> f64 {
        (self.coefficients.vol_signal_deriv)(x, t)
    }

    #[inline]
    pub fn drift_obs(&self, y: f64, x: f64, t: f64) -> f64 {
        (self.coefficients.drift_obs)(y, x, t)
    }

    #[inline]
    pub fn vol_obs_shared(&self, y: f64, t: f64) -> f64 {
        (self.coefficients.vol_obs_shared)(y, t)
    }

    #[inline]
    pub fn vol_obs_idio(&self, y: f64, t: f64) -> f64 {
        (self.coefficients.vol_obs_idio)(y, t)
    }

    /// Checks `sigma, nu, delta > 0` on the sampled signal and observation
    /// states at the given times.
    pub fn check_positivity(&self, xs: &[f64], ys: &[f64], ts: &[f64]) -> Result<()> {
        for &t in ts {
            for &x in xs {
                let s = self.vol_signal(x, t);
                if !(s > 0.0) {
                    return Err(Error::param(
                        "vol_signal",
                        format!("sigma({x}, {t}) = {s} is not positive"),
                    ));
                }
            }
            for &y in ys {
                let nu = self.vol_obs_shared(y, t);
                let delta = self.vol_obs_idio(y, t);
                if !(nu > 0.0) {
                    return Err(Error::param(
                        "vol_obs_shared",
                        format!("nu({y}, {t}) = {nu} is not positive"),
                    ));
                }
                if !(delta > 0.0) {
                    return Err(Error::param(
                        "vol_obs_idio",
                        format!("delta({y}, {t}) = {delta} is not positive"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// One Euler step of the signal driven by the standard normal draw `z`.
    #[inline]
    pub fn euler_signal_step(&self, x: f64, t: f64, dt: f64, z: f64) -> f64 {
        x + self.drift_signal(x, t) * dt + self.vol_signal(x, t) * dt.sqrt() * z
    }
}

/// Two-segment regular grid `0 = t_0 < .. < t_m = s < .. < t_n = t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    m: usize,
    n: usize,
}

impl TimeGrid {
    /// `m` steps of size `s/m` on `[0, s]` followed by `steps_after` steps of
    /// size `(t - s)/steps_after` on `[s, t]`.
    pub fn new(s: f64, m: usize, t: f64, steps_after: usize) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::param("s", format!("observation horizon must be > 0, got {s}")));
        }
        if m == 0 {
            return Err(Error::param("m", "need at least one observation step"));
        }
        if steps_after > 0 && !(t > s && t.is_finite()) {
            return Err(Error::param("t", format!("terminal horizon {t} must exceed {s}")));
        }
        let n = m + steps_after;
        let mut times = Vec::with_capacity(n + 1);
        times.extend((0..=m).map(|k| k as f64 * s / m as f64));
        times.extend((1..=steps_after).map(|k| s + k as f64 * (t - s) / steps_after as f64));
        Ok(Self { times, m, n })
    }

    /// Grid covering the observation window only (`n = m`).
    pub fn observation(s: f64, m: usize) -> Result<Self> {
        Self::new(s, m, s, 0)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `t_{k+1} - t_k`.
    pub fn step(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn observation_horizon(&self) -> f64 {
        self.times[self.m]
    }

    pub fn terminal_horizon(&self) -> f64 {
        self.times[self.n]
    }
}

/// Signal values on `t_0..=t_n` and observations on `t_0..=t_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPair {
    pub signal: Vec<f64>,
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    /// Exact transition law; available for presets only.
    Exact,
}

/// `x exp((mu - sigma^2/2) dt + sigma sqrt(dt) z)`.
#[inline]
pub fn exact_gbm_step(x: f64, mu: f64, sigma: f64, dt: f64, z: f64) -> f64 {
    x * ((mu - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z).exp()
}

/// Exact Ornstein-Uhlenbeck transition over `dt`.
#[inline]
pub fn exact_ou_step(x: f64, lambda: f64, theta: f64, sigma: f64, dt: f64, z: f64) -> f64 {
    let decay = (-lambda * dt).exp();
    // (1 - e^{-2 lambda dt}) / (2 lambda), with the lambda -> 0 limit dt
    let var_factor = if lambda * dt < 1e-8 {
        dt * (1.0 - lambda * dt)
    } else {
        -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda)
    };
    theta + (x - theta) * decay + sigma * var_factor.sqrt() * z
}

fn check_finite(step: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::SimulationDiverged { step, value })
    }
}

/// Simulates the signal on `t_0..=t_n` and the observation on `t_0..=t_m`,
/// both driven by the same `W` increments.
pub fn simulate_pair<R: Rng + ?Sized>(
    model: &DiffusionModel,
    grid: &TimeGrid,
    scheme: Scheme,
    rng: &mut R,
) -> Result<PathPair> {
    let (m, n) = (grid.m(), grid.n());
    let mut signal = Vec::with_capacity(n + 1);
    let mut obs = Vec::with_capacity(m + 1);
    let (mut x, mut y) = (model.x0(), model.y0());
    signal.push(x);
    obs.push(y);

    if scheme == Scheme::Exact && model.preset().is_none() {
        return Err(Error::Unsupported {
            model: "custom".into(),
            what: "exact simulation",
        });
    }

    for k in 0..n {
        let t = grid.times()[k];
        let dt = grid.step(k);
        let z_shared: f64 = rng.sample(StandardNormal);
        let observe = k < m;
        let z_idio: f64 = if observe { rng.sample(StandardNormal) } else { 0.0 };

        let (x_next, y_next) = match (scheme, model.preset()) {
            (Scheme::Euler, _) => {
                let x_next = model.euler_signal_step(x, t, dt, z_shared);
                let y_next = if observe {
                    let sq = dt.sqrt();
                    y + model.drift_obs(y, x, t) * dt
                        + model.vol_obs_shared(y, t) * sq * z_shared
                        + model.vol_obs_idio(y, t) * sq * z_idio
                } else {
                    y
                };
                (x_next, y_next)
            }
            (
                Scheme::Exact,
                Some(&Preset::Gbm {
                    mu,
                    sigma,
                    r,
                    nu,
                    delta,
                }),
            ) => {
                let x_next = exact_gbm_step(x, mu, sigma, dt, z_shared);
                let y_next = if observe {
                    let sq = dt.sqrt();
                    y * ((r - 0.5 * nu * nu - 0.5 * delta * delta) * dt
                        + nu * sq * z_shared
                        + delta * sq * z_idio)
                        .exp()
                } else {
                    y
                };
                (x_next, y_next)
            }
            (
                Scheme::Exact,
                Some(&Preset::Ou {
                    lambda,
                    theta,
                    sigma,
                    delta,
                }),
            ) => {
                // Y - X is an OU process driven by W~ alone.
                let x_next = exact_ou_step(x, lambda, theta, sigma, dt, z_shared);
                let y_next = if observe {
                    x_next + exact_ou_step(y - x, lambda, 0.0, delta, dt, z_idio)
                } else {
                    y
                };
                (x_next, y_next)
            }
            (Scheme::Exact, None) => unreachable!(),
        };
        x = check_finite(k + 1, x_next)?;
        signal.push(x);
        if observe {
            y = check_finite(k + 1, y_next)?;
            obs.push(y);
        }
    }
    Ok(PathPair { signal, obs })
}

/// Euler path of the signal over grid indices `k_start..=k_end`, restarted
/// at `x_start`.
pub fn simulate_signal_segment<R: Rng + ?Sized>(
    model: &DiffusionModel,
    x_start: f64,
    k_start: usize,
    k_end: usize,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k_start >= k_end || k_end > grid.n() {
        return Err(Error::InvalidInput(format!(
            "segment [{k_start}, {k_end}] is not inside grid with n = {}",
            grid.n()
        )));
    }
    let mut path = Vec::with_capacity(k_end - k_start + 1);
    let mut x = x_start;
    path.push(x);
    for k in k_start..k_end {
        let z: f64 = rng.sample(StandardNormal);
        x = check_finite(k + 1, model.euler_signal_step(x, grid.times()[k], grid.step(k), z))?;
        path.push(x);
    }
    Ok(path)
}

/// Draws `len` standard normals.
pub fn normals<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform draw on the open interval (0,1).
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn zero_model(x0: f64, y0: f64) -> DiffusionModel {
        let zero: SpaceTimeFn = Arc::new(|_, _| 0.0);
        DiffusionModel::new(
            Coefficients {
                drift_signal: zero.clone(),
                vol_signal: zero.clone(),
                vol_signal_deriv: zero.clone(),
                drift_obs: Arc::new(|_, _, _| 0.0),
                vol_obs_shared: zero.clone(),
                vol_obs_idio: zero,
            },
            x0,
            y0,
        )
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn grid_has_two_regular_segments() {
        let g = TimeGrid::new(1.0, 4, 3.0, 2).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0]);
        assert_eq!((g.m(), g.n()), (4, 6));
        assert!(TimeGrid::new(1.0, 0, 2.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 2, 0.5, 1).is_err());
        assert_eq!(TimeGrid::observation(1.0, 3).unwrap().n(), 3);
    }

    #[test]
    fn zero_coefficients_give_constant_paths() {
        let model = zero_model(1.0, 2.0);
        let grid = TimeGrid::new(1.0, 5, 2.0, 5).unwrap();
        let p = simulate_pair(&model, &grid, Scheme::Euler, &mut stream(1, 0)).unwrap();
        assert_eq!(p.signal.len(), 11);
        assert_eq!(p.obs.len(), 6);
        assert!(p.signal.iter().all(|&x| x == 1.0));
        assert!(p.obs.iter().all(|&y| y == 2.0));

        let seg = simulate_signal_segment(&zero_model(5.0, 0.0), 5.0, 5, 10, &grid, &mut stream(1, 1))
            .unwrap();
        assert_eq!(seg, vec![5.0; 6]);
    }

    #[test]
    fn coinciding_equations_give_identical_paths() {
        let b: SpaceTimeFn = Arc::new(|x, t| 0.1 * x - 0.02 * t);
        let s: SpaceTimeFn = Arc::new(|x, _| 0.2 + 0.05 * x.abs());
        let b2 = b.clone();
        let model = DiffusionModel::new(
            Coefficients {
                drift_signal: b,
                vol_signal: s.clone(),
                vol_signal_deriv: Arc::new(|x, _| 0.05 * x.signum()),
                drift_obs: Arc::new(move |y, _, t| b2(y, t)),
                vol_obs_shared: s,
                vol_obs_idio: Arc::new(|_, _| 0.0),
            },
            1.3,
            1.3,
        );
        let grid = TimeGrid::observation(1.0, 50).unwrap();
        let p = simulate_pair(&model, &grid, Scheme::Euler, &mut stream(9, 0)).unwrap();
        assert_eq!(p.signal, p.obs);
    }

    #[test]
    fn bs_preset_paths_stay_sane() {
        let model = DiffusionModel::gbm(0.03, 0.03, 0.1, 86.3, 86.3);
        let grid = TimeGrid::observation(1.0, 50).unwrap();
        for seed in 0..20 {
            let exact = simulate_pair(&model, &grid, Scheme::Exact, &mut stream(seed, 0)).unwrap();
            assert!(exact.signal.iter().chain(&exact.obs).all(|&v| v > 0.0));
            let euler = simulate_pair(&model, &grid, Scheme::Euler, &mut stream(seed, 0)).unwrap();
            // terminal std of X_1 is about 86.3 * 0.03
            let sd = 86.3 * 0.03;
            assert!(euler.signal.iter().all(|&x| (x - 86.3).abs() < 10.0 * sd));
        }
    }

    #[test]
    fn exact_step_values() {
        let sigma: f64 = 0.3;
        assert_eq!(exact_gbm_step(1.0, sigma * sigma / 2.0, sigma, 0.7, 0.0), 1.0);
        let v = exact_gbm_step(86.3, 0.03, 0.03, 1.0, 0.0);
        assert!((v - 86.3 * (0.02955f64).exp()).abs() < 1e-12);
        assert!((exact_ou_step(1.7, 0.0, 0.4, 0.2, 0.5, 0.0) - 1.7).abs() < 1e-15);
        assert_eq!(exact_ou_step(0.35, 0.18, 0.35, 0.12, 0.5, 0.0), 0.35);
        // lambda -> 0 noise limit is sigma sqrt(dt) z
        let a = exact_ou_step(0.0, 1e-12, 0.0, 1.0, 0.25, 1.0);
        assert!((a - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gbm_log_increment_moments() {
        let (mu, sigma, dt) = (0.03, 0.2, 0.5);
        let mut rng = stream(11, 0);
        let logs: Vec<f64> = normals(&mut rng, 100_000)
            .into_iter()
            .map(|z| exact_gbm_step(2.0, mu, sigma, dt, z).ln() - 2f64.ln())
            .collect();
        let (mean, var) = mean_var(&logs);
        let n = logs.len() as f64;
        let exp_mean = (mu - 0.5 * sigma * sigma) * dt;
        let exp_var = sigma * sigma * dt;
        assert!((mean - exp_mean).abs() < 3.0 * (exp_var / n).sqrt());
        assert!((var - exp_var).abs() < 3.0 * exp_var * (2.0 / n).sqrt());
    }

    #[test]
    fn ou_stationary_variance() {
        let (lambda, theta, sigma) = (0.18, 0.35, 0.12);
        let target = sigma * sigma / (2.0 * lambda);
        // independent draws from a long-run chain: take widely spaced samples
        let mut rng = stream(12, 0);
        let dt = 20.0;
        let mut x = theta;
        let samples: Vec<f64> = (0..100_000)
            .map(|_| {
                x = exact_ou_step(x, lambda, theta, sigma, dt, rng.sample(StandardNormal));
                x
            })
            .collect();
        let (_, var) = mean_var(&samples);
        let se = target * (2.0 / samples.len() as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target}");
    }

    #[test]
    fn euler_segment_matches_ou_mean() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let grid = TimeGrid::new(1.0, 10, 6.0, 200).unwrap();
        let x_start = 0.2;
        let paths = 100_000;
        let mut rng = stream(13, 0);
        let terminal: Vec<f64> = (0..paths)
            .map(|_| {
                *simulate_signal_segment(&model, x_start, 10, 210, &grid, &mut rng)
                    .unwrap()
                    .last()
                    .unwrap()
            })
            .collect();
        let (mean, var) = mean_var(&terminal);
        let exact = 0.35 + (x_start - 0.35) * (-0.18f64 * 5.0).exp();
        assert!((mean - exact).abs() < 3.0 * (var / paths as f64).sqrt());
    }

    #[test]
    fn single_euler_step_is_gaussian_increment() {
        let unit: SpaceTimeFn = Arc::new(|_, _| 1.0);
        let zero: SpaceTimeFn = Arc::new(|_, _| 0.0);
        let model = DiffusionModel::new(
            Coefficients {
                drift_signal: zero.clone(),
                vol_signal: unit.clone(),
                vol_signal_deriv: zero.clone(),
                drift_obs: Arc::new(|_, _, _| 0.0),
                vol_obs_shared: unit.clone(),
                vol_obs_idio: unit,
            },
            0.0,
            0.0,
        );
        let grid = TimeGrid::new(1.0, 1, 1.3, 1).unwrap();
        let mut rng = stream(14, 0);
        let incs: Vec<f64> = (0..100_000)
            .map(|_| {
                let p = simulate_signal_segment(&model, 0.4, 1, 2, &grid, &mut rng).unwrap();
                p[1] - 0.4
            })
            .collect();
        let (_, var) = mean_var(&incs);
        let dt = 0.3;
        assert!((var - dt).abs() < 3.0 * dt * (2.0 / incs.len() as f64).sqrt());
    }

    #[test]
    fn ou_observation_gap_is_stationary_ou() {
        let (lambda, delta) = (0.18, 0.16);
        let model = DiffusionModel::ou(lambda, 0.35, 0.12, delta, 0.35, 0.35);
        // long observation window so that Z = Y - X reaches stationarity
        let grid = TimeGrid::observation(25.0, 250).unwrap();
        let paths = 100_000;
        let gaps: Vec<f64> = (0..paths)
            .map(|i| {
                let p = simulate_pair(&model, &grid, Scheme::Exact, &mut stream(15, i)).unwrap();
                p.obs[250] - p.signal[250]
            })
            .collect();
        let (mean, var) = mean_var(&gaps);
        let target = delta * delta / (2.0 * lambda) * (1.0 - (-2.0 * lambda * 25.0f64).exp());
        let n = paths as f64;
        assert!(mean.abs() < 3.0 * (target / n).sqrt());
        assert!((var - target).abs() < 3.0 * target * (2.0 / n).sqrt());
    }

    #[test]
    fn euler_weak_bias_shrinks() {
        let (mu, sigma, x0) = (0.03, 0.03, 86.3);
        let model = DiffusionModel::gbm(mu, sigma, 0.1, x0, x0);
        let exact = x0 * (mu * 1.0f64).exp();
        // Euler terminal mean is x0 (1 + mu/n)^n: deterministic once averaged,
        // so compare the expectation of the scheme, computed from its recursion.
        let errs: Vec<f64> = [5usize, 10, 20]
            .iter()
            .map(|&n| {
                let grid = TimeGrid::observation(1.0, n).unwrap();
                let mut mean = model.x0();
                for k in 0..n {
                    mean += model.drift_signal(mean, grid.times()[k]) * grid.step(k);
                }
                (mean - exact).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn positivity_check_rejects_bad_coefficients() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        assert!(model.check_positivity(&[0.1, 0.5], &[0.2], &[0.0, 1.0]).is_ok());
        let gbm = DiffusionModel::gbm(0.03, 0.03, 0.1, 86.3, 86.3);
        assert!(gbm.check_positivity(&[-1.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let model = DiffusionModel::new(
            Coefficients {
                drift_signal: Arc::new(|x, _| x * x * 1e200),
                vol_signal: Arc::new(|_, _| 0.0),
                vol_signal_deriv: Arc::new(|_, _| 0.0),
                drift_obs: Arc::new(|_, _, _| 0.0),
                vol_obs_shared: Arc::new(|_, _| 0.0),
                vol_obs_idio: Arc::new(|_, _| 0.0),
            },
            10.0,
            0.0,
        );
        let grid = TimeGrid::observation(1.0, 10).unwrap();
        match simulate_pair(&model, &grid, Scheme::Euler, &mut stream(0, 0)) {
            Err(Error::SimulationDiverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
