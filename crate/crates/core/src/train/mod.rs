//! Alternating adversarial training, data splits, checkpoints and grid search.

pub mod checkpoint;
pub mod grid;
pub mod losses;
pub mod split;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::model::{one_hot, FcrModel, ModelConfig};
use crate::nn::{Adam, Tape};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use grid::{apply_override, grid_search, Grid, GridAxis, GridReport};
pub use losses::{total_loss, Batch, ControlPool, LossParts, LossWeights};
pub use split::{split_dataset, SplitConfig, Splits};

/// Totals beyond this magnitude count as divergence even when finite.
pub const DIVERGENCE_LIMIT: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub disc_steps: usize,
    pub weights: LossWeights,
    pub split: SplitConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 2046,
            lr: 3e-4,
            disc_lr: 3e-4,
            disc_steps: 10,
            weights: LossWeights::default(),
            split: SplitConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(FcrError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(FcrError::Config("batch_size must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("disc_lr", self.disc_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FcrError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let w = self.weights;
        for (name, v) in [("w_sim", w.sim), ("w_ct", w.ct), ("w_dis", w.dis)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FcrError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        self.split.validate()
    }
}

/// One model step of the history log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub parts: LossParts,
    /// Mean discriminator losses over the preceding discriminator steps.
    pub disc_loss_x: f64,
    pub disc_loss_t: f64,
    /// Validation total, on the last step of each epoch.
    pub val_total: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_total: Option<f64>,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize, step: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation total seen; the initial model if
    /// no epoch finished.
    pub model: FcrModel,
    pub history: TrainHistory,
    pub splits: Splits,
    pub status: TrainStatus,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TrainStatus::Diverged { .. })
    }

    pub fn into_result(self) -> Result<TrainOutcome> {
        if let TrainStatus::Diverged { epoch, step, reason } = &self.status {
            return Err(FcrError::Diverged {
                epoch: *epoch,
                step: *step,
                reason: reason.clone(),
            });
        }
        Ok(self)
    }
}

fn check_parts(parts: &LossParts) -> Option<String> {
    if let Some(name) = parts.first_non_finite() {
        return Some(format!("non-finite {name}"));
    }
    if parts.total.abs() > DIVERGENCE_LIMIT {
        return Some(format!("total loss {:.3e} exceeds the divergence limit", parts.total));
    }
    None
}

/// Splits `ds` with the configured seed and trains on the result.
pub fn train(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = split_dataset(ds, &cfg.split, cfg.seed)?;
    train_on_split(ds, &splits, model_cfg, cfg)
}

pub fn train_on_split(ds: &Dataset, splits: &Splits, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.check_dataset(ds)?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(FcrError::Precondition(
            "training needs nonempty train and validation splits".into(),
        ));
    }
    let mut model = FcrModel::new(model_cfg.clone())?;
    let pool = ControlPool::new(ds, &splits.train);
    let mut opt_model = Adam::new(&model.store, model.model_param_ids(), cfg.lr);
    let mut opt_disc = Adam::new(&model.store, model.discriminator_param_ids(), cfg.disc_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val_seed = cfg.seed ^ 0x5eed_7a11_da7e_0001;

    let mut best = model.store.clone();
    let mut history = TrainHistory::default();
    let mut order = splits.train.clone();
    let mut step = 0;
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            let (disc_x, disc_t) = if cfg.disc_steps > 0 {
                let t: Vec<usize> = rows.iter().map(|&r| ds.treatments.codes[r]).collect();
                let x: Vec<usize> = rows.iter().map(|&r| ds.covariates.codes[r]).collect();
                let y = ds.outcomes.select(ndarray::Axis(0), rows);
                let post = model.posterior_batch(
                    &y,
                    &one_hot(&t, model_cfg.n_treatments()),
                    &one_hot(&x, model_cfg.n_covariates()),
                )?;
                let (mut sx, mut st) = (0.0, 0.0);
                for _ in 0..cfg.disc_steps {
                    let mut tape = Tape::new();
                    let (loss, lx, lt) =
                        losses::build_discriminator_objective(&mut tape, &model, &post, &t, &x, &mut rng);
                    let grads = tape.backward(loss);
                    opt_disc.step(&mut model.store, grads.params());
                    sx += lx;
                    st += lt;
                }
                let k = cfg.disc_steps as f64;
                (sx / k, st / k)
            } else {
                (0.0, 0.0)
            };

            let mut tape = Tape::new();
            let obj = losses::build_objective(&mut tape, &model, ds, rows, &pool, &cfg.weights, &mut rng)?;
            if let Some(reason) = check_parts(&obj.parts) {
                status = TrainStatus::Diverged { epoch, step, reason };
                history.steps.push(StepRecord {
                    epoch,
                    step,
                    parts: obj.parts,
                    disc_loss_x: disc_x,
                    disc_loss_t: disc_t,
                    val_total: None,
                });
                break 'epochs;
            }
            let grads = tape.backward(obj.total);
            opt_model.step(&mut model.store, grads.params());
            history.steps.push(StepRecord {
                epoch,
                step,
                parts: obj.parts,
                disc_loss_x: disc_x,
                disc_loss_t: disc_t,
                val_total: None,
            });
            step += 1;
        }

        if !model.store.all_finite() {
            status = TrainStatus::Diverged {
                epoch,
                step,
                reason: "non-finite parameters".into(),
            };
            break;
        }
        let mut vrng = ChaCha8Rng::seed_from_u64(val_seed);
        let val = losses::evaluate_objective(&model, ds, &splits.validation, &pool, &cfg.weights, &mut vrng)?;
        if let Some(reason) = check_parts(&val) {
            status = TrainStatus::Diverged {
                epoch,
                step,
                reason: format!("validation {reason}"),
            };
            break;
        }
        if let Some(last) = history.steps.last_mut() {
            last.val_total = Some(val.total);
        }
        if history.best_val_total.is_none_or(|b| val.total < b) {
            history.best_val_total = Some(val.total);
            history.best_epoch = Some(epoch);
            best = model.store.clone();
        }
    }

    model.store = best;
    Ok(TrainOutcome {
        model,
        history,
        splits: splits.clone(),
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::LatentDims;
    use crate::model::Architecture;
    use crate::simgen::{generate_synthetic, SimConfig};

    fn tiny() -> (Dataset, ModelConfig, TrainConfig) {
        let ds = generate_synthetic(&SimConfig {
            sample_count: 300,
            y_dim: 12,
            ..SimConfig::default()
        })
        .unwrap();
        let mc = ModelConfig::for_dataset(
            &ds,
            LatentDims::new(2, 2, 2).unwrap(),
            Architecture {
                hidden: 16,
                depth: 1,
                embed_width: 8,
                slope: 0.2,
            },
            0,
        );
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 64,
            disc_steps: 2,
            ..TrainConfig::default()
        };
        (ds, mc, tc)
    }

    #[test]
    fn trains_and_logs_every_step() {
        let (ds, mc, tc) = tiny();
        let out = train(&ds, &mc, &tc).unwrap();
        assert_eq!(out.status, TrainStatus::Completed);
        let per_epoch = out.splits.train.len().div_ceil(64);
        assert_eq!(out.history.steps.len(), 3 * per_epoch);
        assert_eq!(out.history.steps.iter().filter(|s| s.val_total.is_some()).count(), 3);
        assert!(out.history.best_epoch.is_some());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (ds, mc, tc) = tiny();
        let a = train(&ds, &mc, &tc).unwrap();
        let b = train(&ds, &mc, &tc).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.store, b.model.store);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (ds, mc, mut tc) = tiny();
        tc.lr = 1e3;
        tc.epochs = 20;
        let out = train(&ds, &mc, &tc).unwrap();
        assert!(out.diverged(), "status {:?}", out.status);
        assert!(out.model.store.all_finite());
        assert!(matches!(out.into_result(), Err(FcrError::Diverged { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let (ds, mc, mut tc) = tiny();
        tc.batch_size = 0;
        assert!(matches!(train(&ds, &mc, &tc), Err(FcrError::Config(_))));
    }
}
