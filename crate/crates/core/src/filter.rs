//! Forward filtering recursion on the quantized signal grids.
//!
//! Between consecutive observation dates the signal/observation pair moves by
//! one Euler (or exact lognormal) step. The kernel `g_k` is the density of
//! `Y_{k+1}` given `(X_k, Y_k, X_{k+1})`; multiplying it by the bridge
//! no-crossing factor `G` gives the barrier-augmented kernel. Only ratios of
//! the resulting vectors are used, so common constants never matter.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::no_cross_unchecked;
use crate::models::{DiffusionModel, Preset};
use crate::quantization::MarginalQuantization;
use crate::{Error, Result};

/// Rows of the transition matrix handled per parallel task. Fixed so the
/// reduction order does not depend on the thread count.
const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    /// Conditional Gaussian density of the Euler step.
    #[default]
    Gaussian,
    /// Conditional lognormal density of the exact GBM step.
    Lognormal,
}

impl KernelChoice {
    pub fn name(&self) -> &'static str {
        match self {
            KernelChoice::Gaussian => "gaussian",
            KernelChoice::Lognormal => "lognormal",
        }
    }
}

/// Coefficients frozen at the left end of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub dt: f64,
    pub sigma: f64,
    pub b: f64,
    pub nu: f64,
    pub delta: f64,
    pub h: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("sigma", self.sigma),
            ("nu", self.nu),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Kernel evaluated with the coefficients of `model` at `(x, y, t)`.
    pub fn at(model: &DiffusionModel, x: f64, y: f64, t: f64, dt: f64) -> Self {
        Self {
            dt,
            sigma: model.vol_signal(x, t),
            b: model.drift_signal(x, t),
            nu: model.vol_obs_shared(y, t),
            delta: model.vol_obs_idio(y, t),
            h: model.drift_obs(y, x, t),
        }
    }
}

/// Density of `y_next` given `(x, y, x_next)` under one Euler step:
/// `exp(-nu^2/(2 delta^2 dt) ((x' - m1)/sigma - (y' - m2)/nu)^2) / (sqrt(2 pi dt) delta)`.
#[inline]
pub fn kernel_g(p: &KernelParams, x: f64, y: f64, x_next: f64, y_next: f64) -> f64 {
    let r1 = (x_next - x - p.b * p.dt) / p.sigma;
    let r2 = (y_next - y - p.h * p.dt) / p.nu;
    let d = r1 - r2;
    (-(p.nu * p.nu) / (2.0 * p.delta * p.delta * p.dt) * d * d).exp() / ((2.0 * PI * p.dt).sqrt() * p.delta)
}

/// Constant parameters of the exact GBM pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalParams {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub nu: f64,
    pub delta: f64,
    pub dt: f64,
}

impl LognormalParams {
    pub fn from_preset(preset: &Preset, dt: f64) -> Result<Self> {
        match *preset {
            Preset::Gbm {
                mu,
                sigma,
                r,
                nu,
                delta,
            } => Ok(Self {
                mu,
                sigma,
                r,
                nu,
                delta,
                dt,
            }),
            _ => Err(Error::Unsupported {
                model: preset.name().into(),
                what: "the lognormal kernel",
            }),
        }
    }
}

/// Density of `y_next` given `(x, y, x_next)` under one exact GBM step.
pub fn kernel_g_lognormal(p: &LognormalParams, x: f64, y: f64, x_next: f64, y_next: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0 && x_next > 0.0 && y_next > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lognormal kernel needs positive states, got ({x}, {y}, {x_next}, {y_next})"
        )));
    }
    Ok(lognormal_unchecked(p, x.ln(), y.ln(), x_next.ln(), y_next))
}

#[inline]
fn lognormal_unchecked(p: &LognormalParams, log_x: f64, log_y: f64, log_x_next: f64, y_next: f64) -> f64 {
    let m1 = log_x + (p.mu - 0.5 * p.sigma * p.sigma) * p.dt;
    let m2 = log_y + (p.r - 0.5 * p.nu * p.nu - 0.5 * p.delta * p.delta) * p.dt;
    let d = (log_x_next - m1) / p.sigma - (y_next.ln() - m2) / p.nu;
    (-(p.nu * p.nu) / (2.0 * p.delta * p.delta * p.dt) * d * d).exp()
        / ((2.0 * PI * p.dt).sqrt() * p.delta * y_next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// Barrier-augmented unnormalized weights on the terminal grid.
    pub pi_hat: Vec<f64>,
    /// Likelihood-only unnormalized weights on the terminal grid.
    pub varpi_hat: Vec<f64>,
    /// Sum of the logs of the common rescaling factors.
    pub log_scale: f64,
    /// `pi_hat_i / sum_j varpi_hat_j`.
    pub normalized: Vec<f64>,
    pub terminal_grid: Vec<f64>,
}

impl FilterState {
    /// Estimate of the probability of no crossing up to the last observation.
    pub fn survival_to_observation(&self) -> f64 {
        self.normalized.iter().sum::<f64>().clamp(0.0, 1.0)
    }
}

/// Runs the forward recursion for `pi_hat` and `varpi_hat` over the grids of
/// `mq` against observations `obs[0..=m]`, with barrier `a`.
pub fn filter_recursion(
    mq: &MarginalQuantization,
    obs: &[f64],
    model: &DiffusionModel,
    a: f64,
    kernel: KernelChoice,
) -> Result<FilterState> {
    if obs.len() != mq.len() {
        return Err(Error::Shape {
            context: "filter_recursion observations",
            expected: mq.len(),
            got: obs.len(),
        });
    }
    if let Some(y) = obs.iter().find(|y| !y.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite observation {y}")));
    }
    let lognormal = match kernel {
        KernelChoice::Gaussian => None,
        KernelChoice::Lognormal => {
            let preset = model.preset().ok_or_else(|| Error::Unsupported {
                model: "custom".into(),
                what: "the lognormal kernel",
            })?;
            let p = LognormalParams::from_preset(preset, 1.0)?;
            if let Some(k) = (0..mq.len()).find(|&k| obs[k] <= 0.0 || mq.signal_grid(k).iter().any(|&x| x <= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "lognormal kernel needs positive states; violated at date {k}"
                )));
            }
            Some(p)
        }
    };

    let times = mq.times();
    let mut pi = vec![1.0];
    let mut varpi = vec![1.0];
    let mut log_scale = 0.0;
    for k in 1..mq.len() {
        let (t, dt) = (times[k - 1], times[k] - times[k - 1]);
        let (y, y_next) = (obs[k - 1], obs[k]);
        let from = mq.signal_grid(k - 1);
        let to = mq.signal_grid(k);
        let cols = to.len();
        let log_to: Vec<f64> = match lognormal {
            Some(_) => to.iter().map(|x| x.ln()).collect(),
            None => Vec::new(),
        };

        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..from.len())
            .collect::<Vec<_>>()
            .par_chunks(ROW_CHUNK)
            .map(|rows| {
                let mut acc_pi = vec![0.0; cols];
                let mut acc_varpi = vec![0.0; cols];
                let mut p_row = vec![0.0; cols];
                let mut scratch = Vec::new();
                for &i in rows {
                    if varpi[i] == 0.0 {
                        continue;
                    }
                    let x = from[i];
                    mq.transition_row(k, i, &mut p_row, &mut scratch);
                    let sig = model.vol_signal(x, t);
                    let var = sig * sig * dt;
                    let gauss = KernelParams::at(model, x, y, t, dt);
                    let logn = lognormal.map(|p| LognormalParams { dt, ..p });
                    let (log_x, log_y) = (x.ln(), y.ln());
                    for j in 0..cols {
                        let p = p_row[j];
                        if p == 0.0 {
                            continue;
                        }
                        let g = match &logn {
                            Some(lp) => lognormal_unchecked(lp, log_x, log_y, log_to[j], y_next),
                            None => kernel_g(&gauss, x, y, to[j], y_next),
                        };
                        let w = g * p;
                        acc_varpi[j] += w * varpi[i];
                        if pi[i] != 0.0 {
                            acc_pi[j] += w * no_cross_unchecked(x, to[j], var, a) * pi[i];
                        }
                    }
                }
                (acc_pi, acc_varpi)
            })
            .collect();

        let mut next_pi = vec![0.0; cols];
        let mut next_varpi = vec![0.0; cols];
        for (p, v) in &partials {
            for j in 0..cols {
                next_pi[j] += p[j];
                next_varpi[j] += v[j];
            }
        }
        let scale = next_varpi.iter().fold(0.0f64, |m, &v| m.max(v));
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::FilterDegenerate { step: k });
        }
        for v in next_pi.iter_mut().chain(next_varpi.iter_mut()) {
            *v /= scale;
        }
        log_scale += scale.ln();
        pi = next_pi;
        varpi = next_varpi;
    }

    let total: f64 = varpi.iter().sum();
    if !(total > 0.0) {
        return Err(Error::FilterDegenerate { step: mq.len() - 1 });
    }
    let normalized = pi.iter().map(|p| p / total).collect();
    Ok(FilterState {
        pi_hat: pi,
        varpi_hat: varpi,
        log_scale,
        normalized,
        terminal_grid: mq.terminal_grid().to_vec(),
    })
}
