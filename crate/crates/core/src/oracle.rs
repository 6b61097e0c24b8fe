//! Brute-force particle estimator of the conditional survival probability,
//! used to cross-check the quantized filter.
//!
//! Particles are drawn from the prior signal dynamics (no resampling) and
//! weighted by the observation likelihood; the barrier enters through the
//! bridge product along each particle. Kept deliberately naive.

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::no_cross_unchecked;
use crate::filter::{KernelChoice, KernelParams, LognormalParams, kernel_g, kernel_g_lognormal};
use crate::models::{DiffusionModel, Preset, TimeGrid, exact_gbm_step};
use crate::rng::{self, TRIAL_BLOCK};
use crate::survival::{fbar_closed_form_table, fbar_mc_table};
use crate::{Error, Result};
use rand_distr::{Distribution, StandardNormal};

/// Below this effective sample size the result carries a warning.
pub const MIN_ESS: f64 = 10.0;

/// Particles whose normalized weight is below this are not given a
/// post-observation simulation.
const NEGLIGIBLE_WEIGHT: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    /// `paths[p][k]`, signal at observation date `k`.
    pub paths: Vec<Vec<f64>>,
    /// Accumulated log-likelihood of the observations.
    pub log_weights: Vec<f64>,
    /// Product of bridge no-crossing factors up to the last observation.
    pub barrier_products: Vec<f64>,
}

impl ParticleCloud {
    /// Weights normalized to sum to one (log-sum-exp).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn effective_sample_size(&self) -> f64 {
        let w = self.normalized_weights();
        1.0 / w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Post-observation survival used by the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum OracleFbar {
    ClosedForm,
    MonteCarlo { trials: usize, steps: usize },
    /// `Fbar = 1`: the estimate is survival up to the last observation.
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub horizons: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Delta-method standard errors of the self-normalized ratios.
    pub std_errs: Vec<f64>,
    pub survival_to_observation: f64,
    pub ess: f64,
    /// Set when the effective sample size is below [`MIN_ESS`].
    pub degenerate_weights: bool,
}

/// Simulates `particles` prior signal paths on the observation grid and
/// accumulates their likelihood and bridge products. The Gaussian kernel is
/// paired with Euler paths, the lognormal kernel with exact GBM paths.
pub fn simulate_cloud(
    model: &DiffusionModel,
    obs: &[f64],
    grid: &TimeGrid,
    a: f64,
    kernel: KernelChoice,
    particles: usize,
    seed: u64,
) -> Result<ParticleCloud> {
    if particles == 0 {
        return Err(Error::param("P", "need at least one particle"));
    }
    let m = grid.m();
    if obs.len() != m + 1 {
        return Err(Error::Shape {
            context: "oracle observations",
            expected: m + 1,
            got: obs.len(),
        });
    }
    let logn = match kernel {
        KernelChoice::Gaussian => None,
        KernelChoice::Lognormal => {
            let preset = model.preset().ok_or_else(|| Error::Unsupported {
                model: "custom".into(),
                what: "the lognormal kernel",
            })?;
            Some(LognormalParams::from_preset(preset, 1.0)?)
        }
    };
    let times = grid.times();
    let blocks = particles.div_ceil(TRIAL_BLOCK);
    let parts: Vec<Vec<(Vec<f64>, f64, f64)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let n = TRIAL_BLOCK.min(particles - b * TRIAL_BLOCK);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let mut path = Vec::with_capacity(m + 1);
                let mut x = model.x0();
                path.push(x);
                let (mut log_l, mut k_prod) = (0.0, 1.0);
                for k in 0..m {
                    let (t, dt) = (times[k], times[k + 1] - times[k]);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let vol = model.vol_signal(x, t);
                    let next = match &logn {
                        Some(p) => exact_gbm_step(x, p.mu, p.sigma, dt, z),
                        None => x + model.drift_signal(x, t) * dt + vol * dt.sqrt() * z,
                    };
                    if !next.is_finite() {
                        return Err(Error::SimulationDiverged { step: k + 1, value: next });
                    }
                    let g = match &logn {
                        Some(p) => kernel_g_lognormal(&LognormalParams { dt, ..*p }, x, obs[k], next, obs[k + 1])?,
                        None => kernel_g(&KernelParams::at(model, x, obs[k], t, dt), x, obs[k], next, obs[k + 1]),
                    };
                    log_l += g.ln();
                    if k_prod > 0.0 {
                        k_prod *= no_cross_unchecked(x, next, vol * vol * dt, a);
                    }
                    x = next;
                    path.push(x);
                }
                out.push((path, log_l, k_prod));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut cloud = ParticleCloud {
        paths: Vec::with_capacity(particles),
        log_weights: Vec::with_capacity(particles),
        barrier_products: Vec::with_capacity(particles),
    };
    for (path, l, k) in parts.into_iter().flatten() {
        cloud.paths.push(path);
        cloud.log_weights.push(l);
        cloud.barrier_products.push(k);
    }
    if cloud.log_weights.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::FilterDegenerate { step: m });
    }
    Ok(cloud)
}

/// Self-normalized ratio `sum w K Fbar / sum w` and its delta-method
/// standard error.
fn ratio(weights: &[f64], values: &[f64]) -> (f64, f64) {
    let est: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    let var: f64 = weights.iter().zip(values).map(|(w, v)| (w * (v - est)).powi(2)).sum();
    (est.clamp(0.0, 1.0), var.sqrt())
}

/// Particle estimate of `P(tau > t_n | Y_{t_0..t_m})` for each horizon.
#[allow(clippy::too_many_arguments)]
pub fn particle_conditional_survival(
    model: &DiffusionModel,
    obs: &[f64],
    grid: &TimeGrid,
    a: f64,
    horizons: &[f64],
    kernel: KernelChoice,
    particles: usize,
    fbar: OracleFbar,
    seed: u64,
) -> Result<OracleEstimate> {
    let cloud = simulate_cloud(model, obs, grid, a, kernel, particles, rng::derive_seed(seed, 0))?;
    let weights = cloud.normalized_weights();
    let ess = 1.0 / weights.iter().map(|v| v * v).sum::<f64>();
    let m = grid.m();
    let t_m = grid.observation_horizon();
    let xs: Vec<f64> = cloud.paths.iter().map(|p| p[m]).collect();

    // per-particle K * Fbar for every horizon
    let fbar_values: Vec<Vec<f64>> = match fbar {
        OracleFbar::One => vec![vec![1.0; particles]; horizons.len()],
        OracleFbar::ClosedForm => fbar_closed_form_table(model, &xs, t_m, horizons, a)?.values,
        OracleFbar::MonteCarlo { trials, steps } => {
            let inner_seed = rng::derive_seed(seed, 1);
            let cols: Vec<Vec<f64>> = (0..particles)
                .into_par_iter()
                .map(|p| {
                    if weights[p] * cloud.barrier_products[p] <= NEGLIGIBLE_WEIGHT {
                        return Ok(vec![0.0; horizons.len()]);
                    }
                    let t = fbar_mc_table(
                        model,
                        &xs[p..=p],
                        &[1.0],
                        t_m,
                        horizons,
                        steps,
                        trials,
                        a,
                        rng::derive_seed(inner_seed, p as u64),
                    )?;
                    Ok(t.values.iter().map(|v| v[0]).collect())
                })
                .collect::<Result<_>>()?;
            (0..horizons.len()).map(|h| cols.iter().map(|c| c[h]).collect()).collect()
        }
    };

    let (survival_to_observation, _) = ratio(&weights, &cloud.barrier_products);
    let mut probabilities = Vec::with_capacity(horizons.len());
    let mut std_errs = Vec::with_capacity(horizons.len());
    for f in &fbar_values {
        let v: Vec<f64> = f.iter().zip(&cloud.barrier_products).map(|(f, k)| f * k).collect();
        let (p, se) = ratio(&weights, &v);
        probabilities.push(p);
        std_errs.push(se);
    }
    Ok(OracleEstimate {
        horizons: horizons.to_vec(),
        probabilities,
        std_errs,
        survival_to_observation,
        ess,
        degenerate_weights: ess < MIN_ESS,
    })
}

/// Half-width of the 95% percentile bootstrap interval of the
/// self-normalized ratio `sum w v / sum w`.
pub fn bootstrap_half_width(weights: &[f64], values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = weights.len();
    let mut rng = rng::stream(seed, 0);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                num += weights[i] * values[i];
                den += weights[i];
            }
            if den > 0.0 { num / den } else { 0.0 }
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo = stats[((0.025 * resamples as f64) as usize).min(resamples - 1)];
    let hi = stats[((0.975 * resamples as f64) as usize).min(resamples - 1)];
    0.5 * (hi - lo)
}

/// Plain Monte Carlo of the unconditional survival `P(tau > t_n)` of the
/// continuous Euler scheme from `x0`, with `steps_per_unit` steps per year.
pub fn prior_survival(
    model: &DiffusionModel,
    a: f64,
    horizons: &[f64],
    steps_per_unit: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let t_max = *horizons.last().ok_or_else(|| Error::param("horizons", "empty"))?;
    let steps = ((t_max * steps_per_unit as f64).ceil() as usize).max(1);
    let t = fbar_mc_table(model, &[model.x0()], &[1.0], 0.0, horizons, steps, trials, a, seed)?;
    Ok(t.values.iter().zip(&t.std_errs).map(|(v, se)| (v[0], *se)).collect())
}

/// Whether the model admits the closed-form post-observation survival.
pub fn has_closed_form(model: &DiffusionModel) -> bool {
    matches!(model.preset(), Some(Preset::Gbm { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Scheme, simulate_pair};

    #[test]
    fn no_barrier_and_unit_fbar_gives_one() {
        let model = DiffusionModel::gbm(0.03, 0.03, 0.1, 86.3, 86.3);
        let grid = TimeGrid::observation(1.0, 5).unwrap();
        let obs = simulate_pair(&model, &grid, Scheme::Exact, &mut rng::stream(1, 0)).unwrap().obs;
        let est = particle_conditional_survival(
            &model,
            &obs,
            &grid,
            f64::NEG_INFINITY,
            &[2.0],
            KernelChoice::Lognormal,
            2000,
            OracleFbar::One,
            3,
        )
        .unwrap();
        assert!((est.probabilities[0] - 1.0).abs() < 1e-12);
        assert!(!est.degenerate_weights);
    }

    #[test]
    fn uninformative_observations_recover_prior() {
        let (sigma, a) = (0.12, 0.2);
        let model = DiffusionModel::ou(0.18, 0.35, sigma, 1e3 * sigma, 0.35, 0.35);
        let grid = TimeGrid::observation(1.0, 10).unwrap();
        let obs = simulate_pair(&model, &grid, Scheme::Exact, &mut rng::stream(2, 0)).unwrap().obs;
        let horizons = [1.5, 2.0];
        let est = particle_conditional_survival(
            &model,
            &obs,
            &grid,
            a,
            &horizons,
            KernelChoice::Gaussian,
            20_000,
            OracleFbar::MonteCarlo { trials: 1, steps: 20 },
            4,
        )
        .unwrap();
        let prior = prior_survival(&model, a, &horizons, 20, 20_000, 5).unwrap();
        for (h, (p, se)) in prior.iter().enumerate() {
            let tol = 3.0 * (se * se + est.std_errs[h] * est.std_errs[h]).sqrt() + 0.01;
            assert!((est.probabilities[h] - p).abs() < tol, "{} vs {p}", est.probabilities[h]);
        }
        assert!(est.ess > 0.9 * 20_000.0);
    }

    #[test]
    fn bootstrap_width_shrinks_with_sample_size() {
        let model = DiffusionModel::gbm(0.03, 0.03, 0.1, 86.3, 86.3);
        let grid = TimeGrid::observation(1.0, 10).unwrap();
        let obs = simulate_pair(&model, &grid, Scheme::Exact, &mut rng::stream(6, 0)).unwrap().obs;
        let width = |p: usize| {
            let c = simulate_cloud(&model, &obs, &grid, 85.0, KernelChoice::Lognormal, p, 7).unwrap();
            bootstrap_half_width(&c.normalized_weights(), &c.barrier_products, 400, 8)
        };
        let ratio = width(8000) / width(4000);
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.2 * std::f64::consts::FRAC_1_SQRT_2, "{ratio}");
    }

    #[test]
    fn argument_errors() {
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let grid = TimeGrid::observation(1.0, 4).unwrap();
        assert!(simulate_cloud(&model, &[0.35; 4], &grid, 0.2, KernelChoice::Gaussian, 10, 1).is_err());
        assert!(simulate_cloud(&model, &[0.35; 5], &grid, 0.2, KernelChoice::Gaussian, 0, 1).is_err());
        assert!(simulate_cloud(&model, &[0.35; 5], &grid, 0.2, KernelChoice::Lognormal, 10, 1).is_err());
    }
}
