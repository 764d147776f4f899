//! Full evaluation of a trained model into one serializable report.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::cluster_labels;
use super::hsic::hsic;
use super::kci::kci_test;
use super::mcc::{mcc, Correlation};
use super::nmi::nmi;
use super::response::{counterfactual_predict, deg_mse, r2_score, synthetic_counterfactual_truth, DegTest};
use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::model::{one_hot, BlockBatch, FcrModel};
use crate::train::Splits;

/// Stride between per-task seeds derived from the root seed.
const SEED_STRIDE: u64 = 0x9e37_79b9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_neighbors: usize,
    pub resolution: f64,
    pub kci_samples: usize,
    pub kci_repeats: usize,
    pub hsic_samples: usize,
    pub hsic_permutations: usize,
    pub top_k: usize,
    pub deg_test: DegTest,
    pub correlation: Correlation,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_neighbors: 15,
            resolution: 1.0,
            kci_samples: 2000,
            kci_repeats: 100,
            hsic_samples: 1000,
            hsic_permutations: 500,
            top_k: 20,
            deg_test: DegTest::Welch,
            correlation: Correlation::Rank,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(FcrError::Config("eval.k_neighbors must be positive".into()));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(FcrError::Config("eval.resolution must be positive".into()));
        }
        if self.kci_samples < 5 || self.hsic_samples < 5 {
            return Err(FcrError::Config("kernel tests need at least 5 samples".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsicEntry {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub n_cells: usize,
    pub n_evaluated: usize,
    pub n_predicted: usize,
    pub n_prediction_skipped: usize,
    pub deg_groups_used: usize,
    pub deg_groups_skipped: Vec<String>,
    pub deg_top_k: usize,
    pub mcc_constant_columns: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mcc: Option<f64>,
    pub nmi_x: Option<f64>,
    pub nmi_t: Option<f64>,
    pub nmi_xt: Option<f64>,
    pub r2: Option<f64>,
    pub deg_mse: Option<f64>,
    pub kci: BTreeMap<String, Vec<f64>>,
    pub hsic: BTreeMap<String, HsicEntry>,
    pub metadata: ReportMetadata,
}

fn task_seed(root: u64, k: u64) -> u64 {
    root.wrapping_add(SEED_STRIDE.wrapping_mul(k + 1))
}

fn subsample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

fn nmi_of(emb: &Array2<f64>, target: &[usize], cfg: &EvalConfig) -> Result<Option<f64>> {
    if emb.nrows() < cfg.k_neighbors + 1 {
        return Ok(None);
    }
    let labels = cluster_labels(emb, cfg.k_neighbors, cfg.resolution, cfg.seed)?;
    Ok(Some(nmi(&labels, target)?.value))
}

/// Runs every metric on `rows` of `ds` (the test split when given).
/// Counterfactual metrics decode held-out controls (the prediction split)
/// with each non-control treatment found among `rows`.
pub fn evaluate(model: &FcrModel, ds: &Dataset, splits: Option<&Splits>, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    model.config.check_dataset(ds)?;
    let all: Vec<usize> = (0..ds.n_cells()).collect();
    let rows: Vec<usize> = match splits {
        Some(s) if !s.test.is_empty() => s.test.clone(),
        _ => all.clone(),
    };
    let post: BlockBatch = model.encode_rows(ds, &rows)?;
    let dims = model.dims();
    let x: Vec<usize> = rows.iter().map(|&r| ds.covariates.codes[r]).collect();
    let t: Vec<usize> = rows.iter().map(|&r| ds.treatments.codes[r]).collect();
    let (n_x, n_t) = (ds.covariates.n_levels(), ds.treatments.n_levels());

    let mut mcc_value = None;
    let mut mcc_constant = None;
    if let Some(truth) = &ds.truth {
        if truth.latents.ncols() == dims.total() {
            let z_true = truth.latents.select(Axis(0), &rows).slice(s![.., dims.tx_range()]).to_owned();
            let r = mcc(&z_true, &post.tx_mean, cfg.correlation)?;
            mcc_value = Some(r.mcc);
            mcc_constant = Some(r.constant_columns);
        }
    }

    let xt: Vec<usize> = x.iter().zip(&t).map(|(a, b)| a * n_t + b).collect();
    let nmi_x = nmi_of(&post.x_mean, &x, cfg)?;
    let nmi_t = nmi_of(&post.t_mean, &t, cfg)?;
    let nmi_xt = nmi_of(&post.tx_mean, &xt, cfg)?;

    let x_enc = one_hot(&x, n_x);
    let t_enc = one_hot(&t, n_t);
    let kci_specs: [(&str, &Array2<f64>, &Array2<f64>, &Array2<f64>); 4] = [
        ("z_x_indep_t_given_x", &post.x_mean, &t_enc, &x_enc),
        ("z_t_indep_x_given_t", &post.t_mean, &x_enc, &t_enc),
        ("z_x_indep_z_tx_given_x", &post.x_mean, &post.tx_mean, &x_enc),
        ("z_t_indep_z_tx_given_t", &post.t_mean, &post.tx_mean, &t_enc),
    ];
    let n = rows.len();
    let repeats = if cfg.kci_samples >= n { 1 } else { cfg.kci_repeats };
    let mut kci = BTreeMap::new();
    if n >= 5 {
        for (k, (name, a, b, c)) in kci_specs.iter().enumerate() {
            let p: Result<Vec<f64>> = (0..repeats)
                .into_par_iter()
                .map(|rep| {
                    let idx = subsample(n, cfg.kci_samples, task_seed(cfg.seed, (k * 100_000 + rep) as u64));
                    let pick = |m: &Array2<f64>| m.select(Axis(0), &idx);
                    Ok(kci_test(&pick(a), &pick(b), &pick(c))?.p_value)
                })
                .collect();
            kci.insert(name.to_string(), p?);
        }
    }

    let mut hsic_map = BTreeMap::new();
    if n >= 5 {
        let idx = subsample(n, cfg.hsic_samples, task_seed(cfg.seed, 7_000_000));
        let pick = |m: &Array2<f64>| m.select(Axis(0), &idx);
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, 7_000_001));
        let random = Array2::from_shape_simple_fn((idx.len(), dims.n_x.max(dims.n_t)), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let (zx, zt, xe, te) = (pick(&post.x_mean), pick(&post.t_mean), pick(&x_enc), pick(&t_enc));
        let pairs: [(&str, &Array2<f64>, &Array2<f64>); 6] = [
            ("z_x_vs_x", &zx, &xe),
            ("z_x_vs_t", &zx, &te),
            ("z_x_vs_r", &zx, &random),
            ("z_t_vs_x", &zt, &xe),
            ("z_t_vs_t", &zt, &te),
            ("z_t_vs_r", &zt, &random),
        ];
        for (k, (name, a, b)) in pairs.iter().enumerate() {
            let r = hsic(a, b, cfg.hsic_permutations, task_seed(cfg.seed, 8_000_000 + k as u64))?;
            hsic_map.insert(
                name.to_string(),
                HsicEntry {
                    statistic: r.statistic,
                    p_value: r.p_value,
                },
            );
        }
    }

    // Counterfactual prediction for held-out controls.
    let controls: Vec<usize> = match splits {
        Some(s) => s.prediction.clone(),
        None => all.iter().copied().filter(|&r| ds.control_mask[r]).collect(),
    };
    let mut predicted = Vec::new();
    let mut truths = Vec::new();
    let mut reference_rows = Vec::new();
    let mut skipped = 0;
    let synthetic = ds.truth.as_ref().is_some_and(|t| t.mixer.is_some());
    for level in 0..n_t {
        if Some(level) == ds.control_level {
            continue;
        }
        let refs: Vec<usize> = rows.iter().copied().filter(|&r| ds.treatments.codes[r] == level).collect();
        if refs.is_empty() || controls.is_empty() {
            continue;
        }
        let cf = counterfactual_predict(model, ds, &controls, &refs)?;
        skipped += cf.skipped.len();
        if cf.predictions.nrows() == 0 {
            continue;
        }
        if synthetic {
            let pairs: Vec<(usize, usize)> = cf.control_rows.iter().copied().zip(cf.reference_rows.iter().copied()).collect();
            truths.push(synthetic_counterfactual_truth(ds, &pairs, dims.n_x)?);
        }
        reference_rows.extend(cf.reference_rows.iter().copied());
        predicted.push(cf.predictions);
    }
    let (r2, deg) = if predicted.is_empty() {
        (None, None)
    } else {
        let views: Vec<_> = predicted.iter().map(|p| p.view()).collect();
        let pred = ndarray::concatenate(Axis(0), &views).expect("gene counts agree");
        let r2 = if synthetic {
            let tv: Vec<_> = truths.iter().map(|p| p.view()).collect();
            r2_score(&ndarray::concatenate(Axis(0), &tv).expect("gene counts agree"), &pred)?
        } else {
            group_mean_r2(ds, &pred, &reference_rows)?
        };
        (r2, Some(deg_mse(ds, &pred, &reference_rows, cfg.top_k, cfg.deg_test)?))
    };

    Ok(MetricsReport {
        mcc: mcc_value,
        nmi_x,
        nmi_t,
        nmi_xt,
        r2,
        deg_mse: deg.as_ref().and_then(|d| d.mse),
        kci,
        hsic: hsic_map,
        metadata: ReportMetadata {
            seed: cfg.seed,
            config_hash: model.config.hash(),
            n_cells: ds.n_cells(),
            n_evaluated: n,
            n_predicted: reference_rows.len(),
            n_prediction_skipped: skipped,
            deg_groups_used: deg.as_ref().map_or(0, |d| d.groups_used),
            deg_groups_skipped: deg.as_ref().map_or_else(Vec::new, |d| d.groups_skipped.clone()),
            deg_top_k: deg.as_ref().map_or(cfg.top_k, |d| d.top_k),
            mcc_constant_columns: mcc_constant,
        },
    })
}

/// R² between per-group mean predicted and observed expression, grouping
/// predictions by the covariate and treatment of their reference rows.
pub fn group_mean_r2(ds: &Dataset, pred: &Array2<f64>, reference_rows: &[usize]) -> Result<Option<f64>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &r) in reference_rows.iter().enumerate() {
        groups
            .entry((ds.covariates.codes[r], ds.treatments.codes[r]))
            .or_default()
            .push(i);
    }
    let g = ds.n_genes();
    let mut observed = Array2::zeros((groups.len(), g));
    let mut predicted = Array2::zeros((groups.len(), g));
    for (k, ((c, t), members)) in groups.iter().enumerate() {
        let obs_rows: Vec<usize> = (0..ds.n_cells())
            .filter(|&r| ds.covariates.codes[r] == *c && ds.treatments.codes[r] == *t)
            .collect();
        observed
            .row_mut(k)
            .assign(&ds.outcomes.select(Axis(0), &obs_rows).mean_axis(Axis(0)).expect("nonempty"));
        predicted
            .row_mut(k)
            .assign(&pred.select(Axis(0), members).mean_axis(Axis(0)).expect("nonempty"));
    }
    r2_score(&observed, &predicted)
}
