//! Exhaustive hyperparameter search with a resumable on-disk cache.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::model::{hex_digest, ModelConfig};

use super::{train, TrainConfig, TrainStatus};

pub const OMEGA_SIM: [f64; 11] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
pub const OMEGA_CT: [f64; 11] = OMEGA_SIM;
pub const OMEGA_DIS: [f64; 10] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 3.0, 5.0, 7.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
}

impl Grid {
    /// The full ω₁ × ω₂ × ω₃ search space.
    pub fn standard() -> Self {
        Grid {
            axes: vec![
                GridAxis {
                    key: "w_sim".into(),
                    values: OMEGA_SIM.to_vec(),
                },
                GridAxis {
                    key: "w_ct".into(),
                    values: OMEGA_CT.to_vec(),
                },
                GridAxis {
                    key: "w_dis".into(),
                    values: OMEGA_DIS.to_vec(),
                },
            ],
        }
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            return 0;
        }
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every cell as `(key, value)` assignments, first axis slowest.
    pub fn cells(&self) -> Vec<Vec<(String, f64)>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    axis.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((axis.key.clone(), *v));
                        c
                    })
                })
                .collect();
        }
        if self.axes.is_empty() {
            Vec::new()
        } else {
            cells
        }
    }
}

/// Sets one numeric training field by name; `train.` prefixes are accepted.
pub fn apply_override(cfg: &mut TrainConfig, key: &str, value: f64) -> Result<()> {
    let key = key.strip_prefix("train.").unwrap_or(key);
    let as_count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
            Ok(v as usize)
        } else {
            Err(FcrError::Config(format!("{key} needs a nonnegative integer, got {v}")))
        }
    };
    match key {
        "w_sim" => cfg.weights.sim = value,
        "w_ct" => cfg.weights.ct = value,
        "w_dis" => cfg.weights.dis = value,
        "lr" => cfg.lr = value,
        "disc_lr" => cfg.disc_lr = value,
        "epochs" => cfg.epochs = as_count(value)?,
        "batch_size" => cfg.batch_size = as_count(value)?,
        "disc_steps" => cfg.disc_steps = as_count(value)?,
        other => return Err(FcrError::Config(format!("unknown grid key `{other}`"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub overrides: Vec<(String, f64)>,
    pub hash: String,
    pub best_val_total: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub overrides: Vec<(String, f64)>,
    pub hash: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
enum CachedCell {
    Ok(CellResult),
    Failed(CellFailure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Successful cells, best validation total first.
    pub ranked: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub cache_hits: usize,
}

/// Digest of the outcome matrix and label tables, used to key the cache.
pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in ds.outcomes.iter() {
        h.update(v.to_le_bytes());
    }
    for labels in [&ds.covariates, &ds.treatments] {
        for l in &labels.levels {
            h.update(l.as_bytes());
            h.update([0]);
        }
        for c in &labels.codes {
            h.update((*c as u64).to_le_bytes());
        }
    }
    h.update(format!("{:?}", ds.control_level));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cell_hash(fingerprint: &str, model_cfg: &ModelConfig, cfg: &TrainConfig) -> String {
    let key = serde_json::json!({
        "dataset": fingerprint,
        "model": model_cfg,
        "train": cfg,
    });
    hex_digest(key.to_string().as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::io::atomic_write(path, bytes)
}

fn run_cell(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig, overrides: Vec<(String, f64)>, hash: String) -> CachedCell {
    let fail = |error: String| {
        CachedCell::Failed(CellFailure {
            overrides: overrides.clone(),
            hash: hash.clone(),
            error,
        })
    };
    match train(ds, model_cfg, cfg) {
        Err(e) => fail(e.to_string()),
        Ok(out) => match (&out.status, out.history.best_val_total, out.history.best_epoch) {
            (TrainStatus::Diverged { epoch, step, reason }, _, _) => {
                fail(format!("diverged at epoch {epoch}, step {step}: {reason}"))
            }
            (TrainStatus::Completed, Some(v), Some(e)) => CachedCell::Ok(CellResult {
                overrides: overrides.clone(),
                hash: hash.clone(),
                best_val_total: v,
                best_epoch: e,
            }),
            _ => fail("no epoch completed".into()),
        },
    }
}

/// Trains every grid cell (in parallel) and ranks them by best validation
/// total. With a cache directory, finished cells are stored as
/// `<hash>.json` and reused on the next run.
pub fn grid_search(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    grid: &Grid,
    cache_dir: Option<&Path>,
) -> Result<GridReport> {
    if grid.is_empty() {
        return Err(FcrError::Precondition("the grid has no cells".into()));
    }
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir).map_err(|e| FcrError::io(dir, e))?;
    }
    let fingerprint = dataset_fingerprint(ds);
    let mut jobs = Vec::new();
    for overrides in grid.cells() {
        let mut cfg = base.clone();
        for (k, v) in &overrides {
            apply_override(&mut cfg, k, *v)?;
        }
        let hash = cell_hash(&fingerprint, model_cfg, &cfg);
        jobs.push((overrides, cfg, hash));
    }
    let cache_path = |hash: &str| -> Option<PathBuf> { cache_dir.map(|d| d.join(format!("{hash}.json"))) };

    let results: Vec<Result<(CachedCell, bool)>> = jobs
        .into_par_iter()
        .map(|(overrides, cfg, hash)| {
            if let Some(p) = cache_path(&hash) {
                if let Ok(text) = fs::read_to_string(&p) {
                    if let Ok(cell) = serde_json::from_str::<CachedCell>(&text) {
                        return Ok((cell, true));
                    }
                }
            }
            let cell = run_cell(ds, model_cfg, &cfg, overrides, hash.clone());
            if let Some(p) = cache_path(&hash) {
                write_atomic(&p, serde_json::to_string_pretty(&cell)?.as_bytes())?;
            }
            Ok((cell, false))
        })
        .collect();

    let mut report = GridReport {
        ranked: Vec::new(),
        failures: Vec::new(),
        cache_hits: 0,
    };
    for r in results {
        let (cell, hit) = r?;
        report.cache_hits += hit as usize;
        match cell {
            CachedCell::Ok(c) => report.ranked.push(c),
            CachedCell::Failed(f) => report.failures.push(f),
        }
    }
    report
        .ranked
        .sort_by(|a, b| a.best_val_total.total_cmp(&b.best_val_total));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size() {
        let g = Grid::standard();
        assert_eq!(g.len(), 1210);
        assert_eq!(g.cells().len(), 1210);
    }

    #[test]
    fn overrides_apply_and_reject_unknown() {
        let mut cfg = TrainConfig::default();
        apply_override(&mut cfg, "train.w_dis", 7.0).unwrap();
        apply_override(&mut cfg, "epochs", 3.0).unwrap();
        assert_eq!(cfg.weights.dis, 7.0);
        assert_eq!(cfg.epochs, 3);
        assert!(apply_override(&mut cfg, "epochs", 2.5).is_err());
        assert!(apply_override(&mut cfg, "nope", 1.0).is_err());
    }
}
