//! On-disk cache of marginal quantizations, so repeated runs skip the
//! codebook construction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::marginal::MarginalQuantization;
use crate::models::{DiffusionModel, Preset, TimeGrid};
use crate::{Error, Result};

pub const CACHE_VERSION: u32 = 1;

/// Everything the marginal quantization depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub version: u32,
    pub preset: Preset,
    pub x0: f64,
    pub horizon: f64,
    pub m: usize,
    pub budget: usize,
}

impl CacheKey {
    /// `None` for custom models, whose coefficients cannot be keyed.
    pub fn new(model: &DiffusionModel, grid: &TimeGrid, budget: usize) -> Option<Self> {
        Some(Self {
            version: CACHE_VERSION,
            preset: *model.preset()?,
            x0: model.x0(),
            horizon: grid.observation_horizon(),
            m: grid.m(),
            budget,
        })
    }

    pub fn file_name(&self) -> String {
        let canonical = serde_json::to_string(self).expect("key serializes");
        // FNV-1a, stable across platforms and toolchains
        let hash = canonical
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        format!(
            "mq-v{}-{}-m{}-N{}-{hash:016x}.json",
            self.version,
            self.preset.name(),
            self.m,
            self.budget
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    key: CacheKey,
    quantization: MarginalQuantization,
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Cache(format!("{}: {e}", path.display()))
}

pub fn load(dir: &Path, key: &CacheKey) -> Result<Option<MarginalQuantization>> {
    let path = dir.join(key.file_name());
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(cache_err(&path, e)),
    };
    let file: CacheFile = serde_json::from_str(&text).map_err(|e| cache_err(&path, e))?;
    // hash collisions or stale formats are treated as misses
    Ok((file.key == *key).then_some(file.quantization))
}

pub fn store(dir: &Path, key: &CacheKey, mq: &MarginalQuantization) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
    let path = dir.join(key.file_name());
    let file = CacheFile {
        key: key.clone(),
        quantization: mq.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| cache_err(&path, e))?;
    // write-then-rename so a concurrent reader never sees a partial file
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| cache_err(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))?;
    Ok(path)
}

/// Loads the quantization from `dir` if present, otherwise builds and stores
/// it. Without a directory, or for custom models, always builds.
pub fn load_or_build(
    dir: Option<&Path>,
    model: &DiffusionModel,
    grid: &TimeGrid,
    budget: usize,
) -> Result<MarginalQuantization> {
    let key = CacheKey::new(model, grid, budget);
    if let (Some(dir), Some(key)) = (dir, &key) {
        if let Some(mq) = load(dir, key)? {
            return Ok(mq);
        }
        let mq = MarginalQuantization::build(model, grid, budget)?;
        store(dir, key, &mq)?;
        return Ok(mq);
    }
    MarginalQuantization::build(model, grid, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = std::env::temp_dir().join(format!("mq-cache-test-{}", std::process::id()));
        let model = DiffusionModel::ou(0.18, 0.35, 0.12, 0.16, 0.35, 0.35);
        let grid = TimeGrid::observation(1.0, 8).unwrap();
        let cold = load_or_build(Some(&dir), &model, &grid, 60).unwrap();
        let key = CacheKey::new(&model, &grid, 60).unwrap();
        assert!(dir.join(key.file_name()).exists());
        let warm = load_or_build(Some(&dir), &model, &grid, 60).unwrap();
        assert_eq!(cold, warm);

        let other = CacheKey::new(&model, &grid, 61).unwrap();
        assert_ne!(other.file_name(), key.file_name());
        assert!(load(&dir, &other).unwrap().is_none());
        fs::remove_dir_all(&dir).unwrap();
    }
}
