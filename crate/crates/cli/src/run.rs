//! End-to-end run: observations, quantization, filter, curve, artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use barrier_filter::filter::{FilterState, filter_recursion};
use barrier_filter::models::{DiffusionModel, Scheme, TimeGrid, simulate_pair};
use barrier_filter::oracle::{OracleEstimate, OracleFbar, particle_conditional_survival};
use barrier_filter::quantization::{MarginalQuantization, cache};
use barrier_filter::rng;
use barrier_filter::survival::{CurveMeta, CurveSettings, FbarMethod, SurvivalCurve, curve_from_filter};
use serde::Serialize;

use crate::CliError;
use crate::config::{ObservationSource, RunConfig, SWEEP_DELTAS};
use crate::io;

const OBS_LABEL: u64 = 1;
const ORACLE_LABEL: u64 = 2;

/// Observations on the grid, with the hidden signal when simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub obs: Vec<f64>,
    pub signal: Option<Vec<f64>>,
}

pub fn observation_grid(cfg: &RunConfig) -> Result<TimeGrid, CliError> {
    TimeGrid::observation(cfg.t_m, cfg.m).map_err(CliError::numerical("grid"))
}

/// Exact simulation driven by the stream derived from the run seed. The
/// driver does not depend on the noise level, so runs that differ only in
/// `delta` see the same Brownian increments.
pub fn simulate_observations(cfg: &RunConfig, model: &DiffusionModel, grid: &TimeGrid) -> Result<Observations, CliError> {
    let mut r = rng::stream(rng::derive_seed(cfg.seed, OBS_LABEL), 0);
    let pair = simulate_pair(model, grid, Scheme::Exact, &mut r).map_err(CliError::numerical("simulate observations"))?;
    Ok(Observations {
        obs: pair.obs,
        signal: Some(pair.signal),
    })
}

pub fn observations(cfg: &RunConfig, model: &DiffusionModel, grid: &TimeGrid) -> Result<Observations, CliError> {
    match &cfg.observations {
        ObservationSource::Simulate => simulate_observations(cfg, model, grid),
        ObservationSource::Csv(path) => Ok(Observations {
            obs: io::read_observations(path, grid.times())?,
            signal: None,
        }),
    }
}

pub fn quantization(cfg: &RunConfig, model: &DiffusionModel, grid: &TimeGrid) -> Result<MarginalQuantization, CliError> {
    if let Some(dir) = &cfg.cache_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    cache::load_or_build(cfg.cache_dir.as_deref(), model, grid, cfg.budget).map_err(CliError::numerical("quantization"))
}

pub fn settings(cfg: &RunConfig) -> CurveSettings {
    CurveSettings {
        t_m: cfg.t_m,
        m: cfg.m,
        budget: cfg.budget,
        steps: cfg.steps,
        trials: cfg.trials,
        kernel: cfg.kernel,
        fbar: cfg.fbar,
        seed: cfg.seed,
        cache_dir: cfg.cache_dir.clone(),
    }
}

/// Filter and survival curve for one observation path on a prepared
/// quantization.
pub fn compute_curve(
    cfg: &RunConfig,
    model: &DiffusionModel,
    mq: &MarginalQuantization,
    obs: &[f64],
) -> Result<(FilterState, SurvivalCurve), CliError> {
    let state = filter_recursion(mq, obs, model, cfg.a, cfg.kernel).map_err(CliError::numerical("filter"))?;
    let curve =
        curve_from_filter(model, &state, cfg.a, &cfg.horizons, &settings(cfg)).map_err(CliError::numerical("survival"))?;
    Ok((state, curve))
}

/// Particle oracle on the same observations, with the post-observation
/// survival evaluated the way the curve was.
pub fn oracle(
    cfg: &RunConfig,
    model: &DiffusionModel,
    grid: &TimeGrid,
    obs: &[f64],
    curve: &SurvivalCurve,
) -> Result<OracleEstimate, CliError> {
    let fbar = match curve.meta.fbar {
        FbarMethod::ClosedForm => OracleFbar::ClosedForm,
        _ => OracleFbar::MonteCarlo {
            trials: cfg.oracle_trials,
            steps: cfg.steps,
        },
    };
    particle_conditional_survival(
        model,
        obs,
        grid,
        cfg.a,
        &cfg.horizons,
        cfg.kernel,
        cfg.particles,
        fbar,
        rng::derive_seed(cfg.seed, ORACLE_LABEL),
    )
    .map_err(CliError::numerical("oracle"))
}

#[derive(Debug, Serialize)]
struct ValidationSummary {
    particles: usize,
    ess: f64,
    degenerate_weights: bool,
    max_abs_diff: f64,
    oracle_survival_to_observation: f64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    meta: &'a CurveMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<ValidationSummary>,
}

/// What one run (or one sweep member) produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub delta: f64,
    pub dir: PathBuf,
    pub observations: Observations,
    pub curve: SurvivalCurve,
    pub oracle: Option<OracleEstimate>,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn run_one(
    cfg: &RunConfig,
    grid: &TimeGrid,
    mq: &MarginalQuantization,
    dir: &Path,
) -> Result<RunResult, CliError> {
    let model = cfg.diffusion_model();
    let observations = observations(cfg, &model, grid)?;
    let (_, curve) = compute_curve(cfg, &model, mq, &observations.obs)?;
    let oracle = if cfg.validate {
        eprintln!("validating against {} particles", cfg.particles);
        Some(oracle(cfg, &model, grid, &observations.obs, &curve)?)
    } else {
        None
    };

    create_dir(dir)?;
    if let Some(signal) = &observations.signal {
        io::write_observations(&dir.join("observations.csv"), grid.times(), &observations.obs, Some(signal))?;
    }
    io::write_curve(&dir.join("survival_curve.csv"), &curve)?;
    let validation = match &oracle {
        Some(o) => {
            io::write_validation(&dir.join("validation.csv"), &curve, o)?;
            let max_abs_diff = curve
                .probabilities
                .iter()
                .zip(&o.probabilities)
                .map(|(f, p)| (f - p).abs())
                .fold(0.0, f64::max);
            Some(ValidationSummary {
                particles: cfg.particles,
                ess: o.ess,
                degenerate_weights: o.degenerate_weights,
                max_abs_diff,
                oracle_survival_to_observation: o.survival_to_observation,
            })
        }
        None => None,
    };
    io::write_json(
        &dir.join("run.json"),
        &Sidecar {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config: cfg,
            meta: &curve.meta,
            validation,
        },
    )?;
    let toml = toml::to_string(&cfg.to_file()).map_err(|e| CliError::Io(format!("config.toml: {e}")))?;
    io::write_text(&dir.join("config.toml"), &toml)?;

    Ok(RunResult {
        delta: cfg.model.delta(),
        dir: dir.to_path_buf(),
        observations,
        curve,
        oracle,
    })
}

/// Runs the configuration and writes its artifacts under `cfg.out_dir`.
/// With `sweep`, runs every noise level of the sweep on the same driver and
/// quantization, one subdirectory each, plus a combined `delta_sweep.csv`.
pub fn run(cfg: &RunConfig, sweep: bool) -> Result<Vec<RunResult>, CliError> {
    let grid = observation_grid(cfg)?;
    let model = cfg.diffusion_model();
    eprintln!("quantizing the signal (budget {}, {} dates)", cfg.budget, cfg.m + 1);
    // the quantization depends on the signal only, so the sweep shares it
    let mq = quantization(cfg, &model, &grid)?;
    create_dir(&cfg.out_dir)?;
    if !sweep {
        return Ok(vec![run_one(cfg, &grid, &mq, &cfg.out_dir)?]);
    }
    let mut results = Vec::with_capacity(SWEEP_DELTAS.len());
    for delta in SWEEP_DELTAS {
        eprintln!("delta = {delta}");
        let c = cfg.with_delta(delta);
        results.push(run_one(&c, &grid, &mq, &cfg.out_dir.join(format!("delta-{delta}")))?);
    }
    write_sweep(&cfg.out_dir.join("delta_sweep.csv"), &results)?;
    Ok(results)
}

fn write_sweep(path: &Path, results: &[RunResult]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["delta", "t_n", "survival_prob", "hitting_cdf", "std_err"]).map_err(err)?;
    for r in results {
        let cdf = r.curve.hitting_cdf();
        for i in 0..r.curve.horizons.len() {
            w.serialize((r.delta, r.curve.horizons[i], r.curve.probabilities[i], cdf[i], r.curve.std_errs[i]))
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// One line per horizon, plus the oracle comparison when present.
pub fn report(results: &[RunResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "# delta={} grid={} survival_to_t_m={:.6} -> {}\n",
            r.delta,
            r.curve.meta.grid_size,
            r.curve.meta.survival_to_observation,
            r.dir.display()
        ));
        match &r.oracle {
            None => {
                out.push_str("t_n\tsurvival\tstd_err\n");
                for i in 0..r.curve.horizons.len() {
                    out.push_str(&format!(
                        "{}\t{:.6}\t{:.2e}\n",
                        r.curve.horizons[i], r.curve.probabilities[i], r.curve.std_errs[i]
                    ));
                }
            }
            Some(o) => {
                out.push_str("t_n\tfilter\toracle\tdelta\toracle_se\n");
                for i in 0..r.curve.horizons.len() {
                    let (f, p) = (r.curve.probabilities[i], o.probabilities[i]);
                    out.push_str(&format!(
                        "{}\t{f:.6}\t{p:.6}\t{:+.6}\t{:.2e}\n",
                        r.curve.horizons[i],
                        f - p,
                        o.std_errs[i]
                    ));
                }
                out.push_str(&format!(
                    "# oracle ess={:.1}{}\n",
                    o.ess,
                    if o.degenerate_weights { " (degenerate weights)" } else { "" }
                ));
            }
        }
    }
    out
}
