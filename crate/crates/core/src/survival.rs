//! Survival after the last observation, `Fbar(t_m, t_n, x)`, and assembly of
//! conditional survival curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::no_cross_unchecked;
use crate::filter::{FilterState, KernelChoice, filter_recursion};
use crate::models::{DiffusionModel, Preset, TimeGrid};
use crate::normal;
use crate::quantization::cache;
use crate::rng::{self, TRIAL_BLOCK};
use crate::{Error, Result};
use rand_distr::{Distribution, StandardNormal};

/// Terminal grid points whose normalized weight is at most this are not
/// simulated; their total weight is reported as `skipped_mass`.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

fn check_mc_args(steps: usize, trials: usize, t_m: f64, t_n: f64) -> Result<()> {
    if steps == 0 {
        return Err(Error::param("steps", "need at least one Euler step"));
    }
    if trials == 0 {
        return Err(Error::param("M", "need at least one trial"));
    }
    if !(t_n >= t_m) {
        return Err(Error::param("t_n", format!("horizon {t_n} precedes {t_m}")));
    }
    Ok(())
}

fn estimate(sum: f64, sum_sq: f64, n: usize) -> McEstimate {
    let n = n as f64;
    let mean = sum / n;
    let var = if n > 1.0 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean: mean.clamp(0.0, 1.0),
        std_err: (var / n).sqrt(),
    }
}

/// Monte Carlo estimate of the probability that the continuous Euler scheme
/// started at `x` at `t_m` stays above `a` until `t_n`: average over `trials`
/// Euler paths of the product of bridge no-crossing factors.
#[allow(clippy::too_many_arguments)]
pub fn fbar_mc(
    model: &DiffusionModel,
    x: f64,
    t_m: f64,
    t_n: f64,
    steps: usize,
    trials: usize,
    a: f64,
    seed: u64,
) -> Result<McEstimate> {
    check_mc_args(steps, trials, t_m, t_n)?;
    if x <= a {
        return Ok(McEstimate { mean: 0.0, std_err: 0.0 });
    }
    if t_n == t_m {
        return Ok(McEstimate { mean: 1.0, std_err: 0.0 });
    }
    let dt = (t_n - t_m) / steps as f64;
    let sqdt = dt.sqrt();
    let blocks = trials.div_ceil(TRIAL_BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let n = TRIAL_BLOCK.min(trials - b * TRIAL_BLOCK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let mut prod = 1.0;
                let mut xk = x;
                for k in 0..steps {
                    let t = t_m + k as f64 * dt;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let vol = model.vol_signal(xk, t);
                    let next = xk + model.drift_signal(xk, t) * dt + vol * sqdt * z;
                    if prod > 0.0 {
                        prod *= no_cross_unchecked(xk, next, vol * vol * dt, a);
                    }
                    xk = next;
                }
                if !xk.is_finite() {
                    return Err(Error::SimulationDiverged {
                        step: steps,
                        value: xk,
                    });
                }
                s += prod;
                s2 += prod * prod;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(estimate(s, s2, trials))
}

/// Closed-form survival of the GBM `dX = mu X dt + sigma X dW` started at `x`
/// over a horizon `u`: `N(h1) - (a/x)^{2(mu - sigma^2/2)/sigma^2} N(h2)`.
pub fn gbm_survival_closed_form(x: f64, mu: f64, sigma: f64, a: f64, u: f64) -> f64 {
    if x <= a {
        return 0.0;
    }
    if u <= 0.0 {
        return 1.0;
    }
    let drift = mu - 0.5 * sigma * sigma;
    let sd = sigma * u.sqrt();
    let log_xa = (x / a).ln();
    let h1 = (log_xa + drift * u) / sd;
    let h2 = (-log_xa + drift * u) / sd;
    let reflect = (-2.0 * drift * log_xa / (sigma * sigma)).exp();
    (normal::cdf(h1) - reflect * normal::cdf(h2)).clamp(0.0, 1.0)
}

/// `sum_i Pi_i Fbar_i`.
pub fn conditional_survival(state: &FilterState, fbar_values: &[f64]) -> Result<f64> {
    if fbar_values.len() != state.normalized.len() {
        return Err(Error::Shape {
            context: "conditional_survival",
            expected: state.normalized.len(),
            got: fbar_values.len(),
        });
    }
    if let Some(v) = fbar_values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("survival value {v} outside [0, 1]")));
    }
    let s: f64 = state.normalized.iter().zip(fbar_values).map(|(p, f)| p * f).sum();
    Ok(s.clamp(0.0, 1.0))
}

/// How `Fbar` is evaluated on the terminal grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbarMethod {
    /// Closed form for the GBM preset, Monte Carlo otherwise.
    #[default]
    Auto,
    MonteCarlo,
    ClosedForm,
}

/// Per-horizon `Fbar` on a set of start points, with common random numbers
/// across start points and horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct FbarTable {
    pub horizons: Vec<f64>,
    /// `values[h][i]` for horizon `h` and start point `i`.
    pub values: Vec<Vec<f64>>,
    /// Standard error of the weighted sum per horizon (zero for closed form).
    pub std_errs: Vec<f64>,
}

/// Union of a uniform grid of `steps` steps on `[t_m, t_max]` and the
/// horizons; returns the grid and the grid index of each horizon.
fn union_grid(t_m: f64, horizons: &[f64], steps: usize) -> (Vec<f64>, Vec<usize>) {
    let t_max = horizons.last().copied().unwrap_or(t_m);
    let dt = (t_max - t_m) / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|k| t_m + k as f64 * dt).collect();
    *times.last_mut().expect("non-empty") = t_max;
    times.extend_from_slice(horizons);
    times.sort_by(f64::total_cmp);
    // merge points closer than rounding noise
    times.dedup_by(|b, a| (*b - *a).abs() <= 1e-12 * a.abs().max(1.0));
    let idx = horizons
        .iter()
        .map(|&h| {
            times
                .iter()
                .position(|&t| (t - h).abs() <= 1e-12 * h.abs().max(1.0))
                .expect("horizon is on the grid")
        })
        .collect();
    (times, idx)
}

/// Monte Carlo `Fbar` at every start point `xs[i]` with weight
/// `weights[i] > NEGLIGIBLE_WEIGHT`, for every horizon. Each trial simulates
/// one Brownian path on the union of a `steps`-step uniform grid over
/// `[t_m, max horizon]` and the horizon dates, shared by all start points.
#[allow(clippy::too_many_arguments)]
pub fn fbar_mc_table(
    model: &DiffusionModel,
    xs: &[f64],
    weights: &[f64],
    t_m: f64,
    horizons: &[f64],
    steps: usize,
    trials: usize,
    a: f64,
    seed: u64,
) -> Result<FbarTable> {
    check_horizons(t_m, horizons)?;
    check_mc_args(steps, trials, t_m, *horizons.last().expect("checked"))?;
    if weights.len() != xs.len() {
        return Err(Error::Shape {
            context: "fbar_mc_table weights",
            expected: xs.len(),
            got: weights.len(),
        });
    }
    let (times, at) = union_grid(t_m, horizons, steps);
    let active: Vec<usize> = (0..xs.len())
        .filter(|&i| weights[i] > NEGLIGIBLE_WEIGHT && xs[i] > a)
        .collect();
    let nh = horizons.len();
    let blocks = trials.div_ceil(TRIAL_BLOCK);

    struct Partial {
        sums: Vec<f64>,
        weighted: Vec<f64>,
        weighted_sq: Vec<f64>,
    }

    let partials: Vec<Partial> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let n = TRIAL_BLOCK.min(trials - b * TRIAL_BLOCK);
            let mut p = Partial {
                sums: vec![0.0; nh * xs.len()],
                weighted: vec![0.0; nh],
                weighted_sq: vec![0.0; nh],
            };
            let mut z = vec![0.0; times.len() - 1];
            let mut trial_sum = vec![0.0; nh];
            for _ in 0..n {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                trial_sum.iter_mut().for_each(|v| *v = 0.0);
                for &i in &active {
                    let mut xk = xs[i];
                    let mut prod = 1.0;
                    let mut h = 0;
                    while h < nh && at[h] == 0 {
                        p.sums[h * xs.len() + i] += 1.0;
                        trial_sum[h] += weights[i];
                        h += 1;
                    }
                    for k in 0..times.len() - 1 {
                        if h == nh || prod == 0.0 {
                            break;
                        }
                        let (t, dt) = (times[k], times[k + 1] - times[k]);
                        let vol = model.vol_signal(xk, t);
                        let next = xk + model.drift_signal(xk, t) * dt + vol * dt.sqrt() * z[k];
                        if !next.is_finite() {
                            return Err(Error::SimulationDiverged { step: k + 1, value: next });
                        }
                        prod *= no_cross_unchecked(xk, next, vol * vol * dt, a);
                        xk = next;
                        while h < nh && at[h] == k + 1 {
                            p.sums[h * xs.len() + i] += prod;
                            trial_sum[h] += weights[i] * prod;
                            h += 1;
                        }
                    }
                }
                for h in 0..nh {
                    p.weighted[h] += trial_sum[h];
                    p.weighted_sq[h] += trial_sum[h] * trial_sum[h];
                }
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; nh * xs.len()];
    let mut weighted = vec![0.0; nh];
    let mut weighted_sq = vec![0.0; nh];
    for p in &partials {
        sums.iter_mut().zip(&p.sums).for_each(|(a, b)| *a += b);
        weighted.iter_mut().zip(&p.weighted).for_each(|(a, b)| *a += b);
        weighted_sq.iter_mut().zip(&p.weighted_sq).for_each(|(a, b)| *a += b);
    }
    let m = trials as f64;
    let values = (0..nh)
        .map(|h| (0..xs.len()).map(|i| (sums[h * xs.len() + i] / m).clamp(0.0, 1.0)).collect())
        .collect();
    let std_errs = (0..nh).map(|h| estimate(weighted[h], weighted_sq[h], trials).std_err).collect();
    Ok(FbarTable {
        horizons: horizons.to_vec(),
        values,
        std_errs,
    })
}

/// Closed-form `Fbar` table for the GBM preset.
pub fn fbar_closed_form_table(model: &DiffusionModel, xs: &[f64], t_m: f64, horizons: &[f64], a: f64) -> Result<FbarTable> {
    check_horizons(t_m, horizons)?;
    let (mu, sigma) = match model.preset() {
        Some(Preset::Gbm { mu, sigma, .. }) => (*mu, *sigma),
        other => {
            return Err(Error::Unsupported {
                model: other.map_or("custom", |p| p.name()).into(),
                what: "the closed-form survival function",
            });
        }
    };
    let values = horizons
        .iter()
        .map(|&h| xs.iter().map(|&x| gbm_survival_closed_form(x, mu, sigma, a, h - t_m)).collect())
        .collect();
    Ok(FbarTable {
        horizons: horizons.to_vec(),
        values,
        std_errs: vec![0.0; horizons.len()],
    })
}

fn check_horizons(t_m: f64, horizons: &[f64]) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::param("horizons", "need at least one horizon"));
    }
    if horizons.iter().any(|&h| !(h > t_m && h.is_finite())) {
        return Err(Error::param("horizons", format!("all horizons must exceed t_m = {t_m}")));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("horizons", "horizons must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub seed: u64,
    pub trials: usize,
    pub steps: usize,
    pub budget: usize,
    pub grid_size: usize,
    pub m: usize,
    pub kernel: KernelChoice,
    pub fbar: FbarMethod,
    /// Filter estimate of survival up to the last observation date.
    pub survival_to_observation: f64,
    /// Weight of terminal points skipped as negligible by the Monte Carlo.
    pub skipped_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub horizons: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub std_errs: Vec<f64>,
    pub meta: CurveMeta,
}

impl SurvivalCurve {
    pub fn hitting_cdf(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| 1.0 - p).collect()
    }
}

/// Settings of [`survival_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSettings {
    pub t_m: f64,
    pub m: usize,
    pub budget: usize,
    pub steps: usize,
    pub trials: usize,
    pub kernel: KernelChoice,
    pub fbar: FbarMethod,
    pub seed: u64,
    pub cache_dir: Option<std::path::PathBuf>,
}

/// Conditional survival curve from a filter state already computed.
pub fn curve_from_filter(
    model: &DiffusionModel,
    state: &FilterState,
    a: f64,
    horizons: &[f64],
    settings: &CurveSettings,
) -> Result<SurvivalCurve> {
    let closed = match settings.fbar {
        FbarMethod::ClosedForm => true,
        FbarMethod::MonteCarlo => false,
        FbarMethod::Auto => matches!(model.preset(), Some(Preset::Gbm { .. })),
    };
    let xs = &state.terminal_grid;
    let table = if closed {
        fbar_closed_form_table(model, xs, settings.t_m, horizons, a)?
    } else {
        fbar_mc_table(
            model,
            xs,
            &state.normalized,
            settings.t_m,
            horizons,
            settings.steps,
            settings.trials,
            a,
            settings.seed,
        )?
    };
    let skipped_mass = if closed {
        0.0
    } else {
        state
            .normalized
            .iter()
            .filter(|&&w| w <= NEGLIGIBLE_WEIGHT)
            .sum::<f64>()
    };
    let probabilities = table
        .values
        .iter()
        .map(|f| conditional_survival(state, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurvivalCurve {
        horizons: horizons.to_vec(),
        probabilities,
        std_errs: table.std_errs,
        meta: CurveMeta {
            seed: settings.seed,
            trials: settings.trials,
            steps: settings.steps,
            budget: settings.budget,
            grid_size: xs.len(),
            m: settings.m,
            kernel: settings.kernel,
            fbar: if closed { FbarMethod::ClosedForm } else { FbarMethod::MonteCarlo },
            survival_to_observation: state.survival_to_observation(),
            skipped_mass,
        },
    })
}

/// Builds (or loads) the quantization, runs the filter once against `obs`,
/// and evaluates the conditional survival at every horizon.
pub fn survival_curve(
    model: &DiffusionModel,
    obs: &[f64],
    a: f64,
    horizons: &[f64],
    settings: &CurveSettings,
) -> Result<SurvivalCurve> {
    check_horizons(settings.t_m, horizons)?;
    let grid = TimeGrid::observation(settings.t_m, settings.m)?;
    let mq = cache::load_or_build(settings.cache_dir.as_deref(), model, &grid, settings.budget)?;
    let state = filter_recursion(&mq, obs, model, a, settings.kernel)?;
    curve_from_filter(model, &state, a, horizons, settings)
}
