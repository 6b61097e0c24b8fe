//! CSV and JSON artifacts.

use std::fs;
use std::path::Path;

use barrier_filter::oracle::OracleEstimate;
use barrier_filter::survival::SurvivalCurve;
use serde::Serialize;

use crate::CliError;

/// Tolerance when matching observation dates against the grid.
pub const TIME_TOL: f64 = 1e-9;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

/// Writes `t_k,y_k[,x_k]`. The hidden signal column is optional.
pub fn write_observations(path: &Path, times: &[f64], obs: &[f64], signal: Option<&[f64]>) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let res = (|| {
        if signal.is_some() {
            w.write_record(["t_k", "y_k", "x_k"])?;
        } else {
            w.write_record(["t_k", "y_k"])?;
        }
        for (k, (t, y)) in times.iter().zip(obs).enumerate() {
            match signal {
                Some(x) => w.serialize((t, y, x[k]))?,
                None => w.serialize((t, y))?,
            }
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| io_err(path, e))
}

/// Reads the `t_k`, `y_k` columns and checks the dates against `times`.
pub fn read_observations(path: &Path, times: &[f64]) -> Result<Vec<f64>, CliError> {
    let bad = |msg: String| CliError::Config(format!("observations: {}: {msg}", path.display()));
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (ct, cy) = (col("t_k")?, col("y_k")?);
    let mut obs = Vec::with_capacity(times.len());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize, name: &str| -> Result<f64, CliError> {
            let v: f64 = rec
                .get(c)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(format!("row {}: {name} is not a number", row + 1)))?;
            if v.is_finite() { Ok(v) } else { Err(bad(format!("row {}: {name} is not finite", row + 1))) }
        };
        let (t, y) = (num(ct, "t_k")?, num(cy, "y_k")?);
        match times.get(row) {
            Some(&expected) if (t - expected).abs() <= TIME_TOL * expected.abs().max(1.0) => obs.push(y),
            Some(&expected) => return Err(bad(format!("row {}: t_k = {t}, grid date is {expected}", row + 1))),
            None => return Err(bad(format!("more than the {} grid dates", times.len()))),
        }
    }
    if obs.len() != times.len() {
        return Err(bad(format!("{} rows, the grid has {} dates", obs.len(), times.len())));
    }
    Ok(obs)
}

/// Writes `t_n,survival_prob,hitting_cdf,std_err`.
pub fn write_curve(path: &Path, curve: &SurvivalCurve) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let cdf = curve.hitting_cdf();
    let res = (|| {
        w.write_record(["t_n", "survival_prob", "hitting_cdf", "std_err"])?;
        for i in 0..curve.horizons.len() {
            w.serialize((curve.horizons[i], curve.probabilities[i], cdf[i], curve.std_errs[i]))?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| io_err(path, e))
}

/// Writes `t_n,filter,oracle,abs_diff,oracle_std_err`.
pub fn write_validation(path: &Path, curve: &SurvivalCurve, oracle: &OracleEstimate) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let res = (|| {
        w.write_record(["t_n", "filter", "oracle", "abs_diff", "oracle_std_err"])?;
        for i in 0..curve.horizons.len() {
            let (f, o) = (curve.probabilities[i], oracle.probabilities[i]);
            w.serialize((curve.horizons[i], f, o, (f - o).abs(), oracle.std_errs[i]))?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| io_err(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}
