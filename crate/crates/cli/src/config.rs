//! Run configuration: named presets overridden by a flat TOML file, then by
//! command-line flags.

use std::path::{Path, PathBuf};

use barrier_filter::filter::KernelChoice;
use barrier_filter::models::{DiffusionModel, Preset};
use barrier_filter::survival::FbarMethod;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PRESET_NAMES: [&str; 4] = ["gbm-fig1", "ou-fig3", "gbm", "ou"];

/// Noise levels used by the delta sweep.
pub const SWEEP_DELTAS: [f64; 3] = [0.1, 0.3, 0.5];

/// The on-disk schema. Every key is optional and overrides the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fbar: Option<FbarMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_trials: Option<usize>,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Keys set in `other` replace those in `self`.
    pub fn merge(mut self, other: ConfigFile) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        let list = other.horizons.is_some();
        let range = other.horizon_start.is_some() || other.horizon_end.is_some() || other.horizon_step.is_some();
        take!(
            preset, mu, sigma, r, nu, lambda, theta, delta, x0, y0, a, t_m, m, horizons, horizon_start,
            horizon_end, horizon_step, steps, budget, trials, kernel, fbar, seed, observations, out_dir,
            cache_dir, validate, particles, oracle_trials
        );
        // an explicit list and a range are alternatives; the later source wins
        if list {
            self.horizon_start = None;
            self.horizon_end = None;
            self.horizon_step = None;
        } else if range {
            self.horizons = None;
        }
        self
    }

    /// The named bundle, with every key filled in.
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let base = ConfigFile {
            preset: Some(name.to_string()),
            seed: Some(42),
            out_dir: Some(PathBuf::from("out")),
            validate: Some(false),
            particles: Some(20_000),
            oracle_trials: Some(1),
            ..Default::default()
        };
        let gbm = ConfigFile {
            mu: Some(0.03),
            sigma: Some(0.03),
            delta: Some(0.1),
            x0: Some(86.3),
            y0: Some(86.3),
            a: Some(76.0),
            kernel: Some(KernelChoice::Lognormal),
            fbar: Some(FbarMethod::ClosedForm),
            ..Default::default()
        };
        let ou = ConfigFile {
            lambda: Some(0.18),
            theta: Some(0.35),
            sigma: Some(0.12),
            delta: Some(0.16),
            x0: Some(0.35),
            y0: Some(0.35),
            a: Some(0.2),
            kernel: Some(KernelChoice::Gaussian),
            fbar: Some(FbarMethod::MonteCarlo),
            ..Default::default()
        };
        let bundle = match name {
            "gbm-fig1" => gbm.merge(ConfigFile {
                t_m: Some(1.0),
                m: Some(50),
                horizon_start: Some(1.1),
                horizon_end: Some(11.0),
                horizon_step: Some(0.1),
                steps: Some(50),
                budget: Some(1000),
                trials: Some(100_000),
                ..Default::default()
            }),
            "ou-fig3" => ou.merge(ConfigFile {
                t_m: Some(1.0),
                m: Some(50),
                horizon_start: Some(1.1),
                horizon_end: Some(6.0),
                horizon_step: Some(0.1),
                steps: Some(50),
                budget: Some(1000),
                trials: Some(100_000),
                ..Default::default()
            }),
            "gbm" => gbm.merge(ConfigFile {
                t_m: Some(1.0),
                m: Some(10),
                horizons: Some(vec![2.0, 5.0, 10.0]),
                steps: Some(50),
                budget: Some(100),
                trials: Some(10_000),
                ..Default::default()
            }),
            "ou" => ou.merge(ConfigFile {
                t_m: Some(1.0),
                m: Some(10),
                horizons: Some(vec![2.0, 4.0, 6.0]),
                steps: Some(50),
                budget: Some(100),
                trials: Some(10_000),
                ..Default::default()
            }),
            other => {
                return Err(CliError::Config(format!(
                    "preset: unknown preset {other:?} (expected one of {})",
                    PRESET_NAMES.join(", ")
                )));
            }
        };
        Ok(base.merge(bundle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Gbm { mu: f64, sigma: f64, r: f64, nu: f64, delta: f64 },
    Ou { lambda: f64, theta: f64, sigma: f64, delta: f64 },
}

impl ModelParams {
    pub fn delta(&self) -> f64 {
        match *self {
            ModelParams::Gbm { delta, .. } | ModelParams::Ou { delta, .. } => delta,
        }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        match self {
            ModelParams::Gbm { mu, sigma, r, nu, .. } => ModelParams::Gbm { mu, sigma, r, nu, delta },
            ModelParams::Ou { lambda, theta, sigma, .. } => ModelParams::Ou { lambda, theta, sigma, delta },
        }
    }

    pub fn preset(&self) -> Preset {
        match *self {
            ModelParams::Gbm { mu, sigma, r, nu, delta } => Preset::Gbm { mu, sigma, r, nu, delta },
            ModelParams::Ou { lambda, theta, sigma, delta } => Preset::Ou { lambda, theta, sigma, delta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ObservationSource {
    #[serde(rename = "simulate")]
    Simulate,
    #[serde(rename = "csv")]
    Csv(PathBuf),
}

/// A fully resolved and validated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelParams,
    pub x0: f64,
    pub y0: f64,
    pub a: f64,
    pub t_m: f64,
    pub m: usize,
    pub horizons: Vec<f64>,
    pub steps: usize,
    pub budget: usize,
    pub trials: usize,
    pub kernel: KernelChoice,
    pub fbar: FbarMethod,
    pub seed: u64,
    pub observations: ObservationSource,
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
    pub validate: bool,
    pub particles: usize,
    pub oracle_trials: usize,
}

fn field<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("{name}: missing")))
}

fn bad(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {reason}"))
}

fn finite(v: f64, name: &str) -> Result<f64, CliError> {
    if v.is_finite() { Ok(v) } else { Err(bad(name, format!("must be finite, got {v}"))) }
}

fn positive(v: f64, name: &str) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 { Ok(v) } else { Err(bad(name, format!("must be > 0, got {v}"))) }
}

fn at_least_one(v: usize, name: &str) -> Result<usize, CliError> {
    if v >= 1 { Ok(v) } else { Err(bad(name, "must be >= 1")) }
}

/// `start, start+step, ..., end` with values rounded to 12 decimals so that
/// `1.1:0.1:11` has exactly 100 points.
pub fn horizon_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(bad("horizon_step", format!("must be > 0, got {step}")));
    }
    if !(start.is_finite() && end.is_finite() && end >= start) {
        return Err(bad("horizon_end", format!("must be >= horizon_start ({start}), got {end}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

impl RunConfig {
    pub fn resolve(file: ConfigFile) -> Result<Self, CliError> {
        let preset = field(file.preset.clone(), "preset")?;
        let family_gbm = preset.starts_with("gbm");
        let model = if family_gbm {
            for (v, name) in [(file.lambda, "lambda"), (file.theta, "theta")] {
                if v.is_some() {
                    return Err(bad(name, "not a parameter of the gbm model"));
                }
            }
            let mu = finite(field(file.mu, "mu")?, "mu")?;
            let sigma = positive(field(file.sigma, "sigma")?, "sigma")?;
            // the observation shares the signal's return dynamics unless overridden
            let r = finite(file.r.unwrap_or(mu), "r")?;
            let nu = finite(file.nu.unwrap_or(sigma), "nu")?;
            let delta = positive(field(file.delta, "delta")?, "delta")?;
            ModelParams::Gbm { mu, sigma, r, nu, delta }
        } else {
            for (v, name) in [(file.mu, "mu"), (file.r, "r"), (file.nu, "nu")] {
                if v.is_some() {
                    return Err(bad(name, "not a parameter of the ou model"));
                }
            }
            ModelParams::Ou {
                lambda: finite(field(file.lambda, "lambda")?, "lambda")?,
                theta: finite(field(file.theta, "theta")?, "theta")?,
                sigma: positive(field(file.sigma, "sigma")?, "sigma")?,
                delta: positive(field(file.delta, "delta")?, "delta")?,
            }
        };
        let x0 = finite(field(file.x0, "x0")?, "x0")?;
        let y0 = finite(field(file.y0, "y0")?, "y0")?;
        let a = finite(field(file.a, "a")?, "a")?;
        if a >= x0 {
            return Err(bad("a", format!("barrier must be below x0 = {x0}, got {a}")));
        }
        if family_gbm && (x0 <= 0.0 || y0 <= 0.0) {
            return Err(bad("x0", "gbm states must be positive"));
        }
        let t_m = positive(field(file.t_m, "t_m")?, "t_m")?;
        let m = at_least_one(field(file.m, "m")?, "m")?;

        let horizons = match (file.horizons, file.horizon_start, file.horizon_end, file.horizon_step) {
            (Some(h), None, None, None) => h,
            (None, Some(s), Some(e), Some(st)) => horizon_range(s, e, st)?,
            (Some(_), ..) => {
                return Err(bad("horizons", "give either a list or horizon_start/horizon_end/horizon_step"));
            }
            (None, ..) => {
                return Err(bad("horizons", "missing (list or horizon_start/horizon_end/horizon_step)"));
            }
        };
        if horizons.is_empty() {
            return Err(bad("horizons", "empty"));
        }
        for (i, &h) in horizons.iter().enumerate() {
            if !(h.is_finite() && h > t_m) {
                return Err(bad("horizons", format!("entry {i} = {h} must be > t_m = {t_m}")));
            }
            if i > 0 && h <= horizons[i - 1] {
                return Err(bad("horizons", format!("must be strictly increasing at entry {i}")));
            }
        }

        let kernel = field(file.kernel, "kernel")?;
        if kernel == KernelChoice::Lognormal && !family_gbm {
            return Err(bad("kernel", "the lognormal kernel needs the gbm model"));
        }
        let fbar = field(file.fbar, "fbar")?;
        if fbar == FbarMethod::ClosedForm && !family_gbm {
            return Err(bad("fbar", "closed form is only available for the gbm model"));
        }

        Ok(RunConfig {
            preset,
            model,
            x0,
            y0,
            a,
            t_m,
            m,
            horizons,
            steps: at_least_one(field(file.steps, "steps")?, "steps")?,
            budget: at_least_one(field(file.budget, "budget")?, "budget")?,
            trials: at_least_one(field(file.trials, "trials")?, "trials")?,
            kernel,
            fbar,
            seed: field(file.seed, "seed")?,
            observations: match file.observations {
                Some(p) => ObservationSource::Csv(p),
                None => ObservationSource::Simulate,
            },
            out_dir: field(file.out_dir, "out_dir")?,
            cache_dir: file.cache_dir,
            validate: file.validate.unwrap_or(false),
            particles: at_least_one(field(file.particles, "particles")?, "particles")?,
            oracle_trials: at_least_one(field(file.oracle_trials, "oracle_trials")?, "oracle_trials")?,
        })
    }

    pub fn diffusion_model(&self) -> DiffusionModel {
        DiffusionModel::from_preset(self.model.preset(), self.x0, self.y0)
    }

    /// A config file that resolves back to this run.
    pub fn to_file(&self) -> ConfigFile {
        let mut f = ConfigFile {
            preset: Some(self.preset.clone()),
            delta: Some(self.model.delta()),
            x0: Some(self.x0),
            y0: Some(self.y0),
            a: Some(self.a),
            t_m: Some(self.t_m),
            m: Some(self.m),
            horizons: Some(self.horizons.clone()),
            steps: Some(self.steps),
            budget: Some(self.budget),
            trials: Some(self.trials),
            kernel: Some(self.kernel),
            fbar: Some(self.fbar),
            seed: Some(self.seed),
            observations: match &self.observations {
                ObservationSource::Csv(p) => Some(p.clone()),
                ObservationSource::Simulate => None,
            },
            out_dir: Some(self.out_dir.clone()),
            validate: Some(self.validate),
            particles: Some(self.particles),
            oracle_trials: Some(self.oracle_trials),
            ..Default::default()
        };
        match self.model {
            ModelParams::Gbm { mu, sigma, r, nu, .. } => {
                f.mu = Some(mu);
                f.sigma = Some(sigma);
                f.r = Some(r);
                f.nu = Some(nu);
            }
            ModelParams::Ou { lambda, theta, sigma, .. } => {
                f.lambda = Some(lambda);
                f.theta = Some(theta);
                f.sigma = Some(sigma);
            }
        }
        f
    }

    /// The same run with a different observation noise.
    pub fn with_delta(&self, delta: f64) -> Self {
        let mut c = self.clone();
        c.model = self.model.with_delta(delta);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_presets_have_the_documented_horizon_counts() {
        let g = RunConfig::resolve(ConfigFile::preset("gbm-fig1").unwrap()).unwrap();
        assert_eq!(g.horizons.len(), 100);
        assert_eq!(g.horizons[0], 1.1);
        assert_eq!(*g.horizons.last().unwrap(), 11.0);
        let o = RunConfig::resolve(ConfigFile::preset("ou-fig3").unwrap()).unwrap();
        assert_eq!(o.horizons.len(), 50);
        assert_eq!(*o.horizons.last().unwrap(), 6.0);
        assert_eq!(o.trials, 100_000);
    }

    #[test]
    fn file_keys_override_the_preset() {
        let file = ConfigFile::from_toml("preset = \"ou\"\ndelta = 0.5\nhorizons = [1.5, 3.0]\n").unwrap();
        let c = RunConfig::resolve(ConfigFile::preset("ou").unwrap().merge(file)).unwrap();
        assert_eq!(c.model.delta(), 0.5);
        assert_eq!(c.horizons, vec![1.5, 3.0]);
    }

    #[test]
    fn errors_name_the_field() {
        let err = |toml: &str| {
            let f = ConfigFile::from_toml(toml).unwrap();
            match RunConfig::resolve(ConfigFile::preset("gbm").unwrap().merge(f)) {
                Err(CliError::Config(msg)) => msg,
                other => panic!("{other:?}"),
            }
        };
        assert!(err("a = 90.0").starts_with("a:"));
        assert!(err("budget = 0").starts_with("budget:"));
        assert!(err("horizons = [0.5]").starts_with("horizons:"));
        assert!(err("horizons = [3.0, 2.0]").starts_with("horizons:"));
        assert!(err("lambda = 1.0").starts_with("lambda:"));
        assert!(err("sigma = -1.0").starts_with("sigma:"));
        match ConfigFile::from_toml("bogus = 1") {
            Err(CliError::Config(msg)) => assert!(msg.contains("bogus"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_file_round_trips() {
        let f = ConfigFile::preset("gbm-fig1").unwrap();
        let text = toml::to_string(&f).unwrap();
        assert_eq!(ConfigFile::from_toml(&text).unwrap(), f);
        for name in PRESET_NAMES {
            let c = RunConfig::resolve(ConfigFile::preset(name).unwrap()).unwrap();
            let text = toml::to_string(&c.to_file()).unwrap();
            let back = RunConfig::resolve(ConfigFile::from_toml(&text).unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }
}
