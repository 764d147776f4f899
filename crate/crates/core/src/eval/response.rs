//! Response-prediction metrics: R², top-k DEG error and counterfactual decoding.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::model::FcrModel;

/// `1 − Σ(y−ŷ)² / Σ(y−ȳ)²` over all entries with the grand mean `ȳ`.
/// `None` when `y_true` is constant.
pub fn r2_score(y_true: &Array2<f64>, y_pred: &Array2<f64>) -> Result<Option<f64>> {
    if y_true.dim() != y_pred.dim() {
        return Err(FcrError::dim("r2 entries", y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(FcrError::Precondition("r2 needs at least one entry".into()));
    }
    let mean = y_true.mean().expect("nonempty");
    let ss_tot: f64 = y_true.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(None);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(Some(1.0 - ss_res / ss_tot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegTest {
    #[default]
    Welch,
    /// Normal approximation of the Mann–Whitney U statistic.
    MannWhitney,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Welch's two-sample t statistic. Zero-variance groups give ±∞ for a
/// nonzero mean difference and 0 otherwise.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    let diff = ma - mb;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Tie-corrected normal approximation z of the Mann–Whitney U statistic for `a` over `b`.
pub fn mann_whitney_z(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a.iter().map(|v| (*v, true)).chain(b.iter().map(|v| (*v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let (mut rank_sum, mut tie_term) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum += r;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    let nn = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var > 0.0 {
        (u - n1 * n2 / 2.0) / var.sqrt()
    } else {
        0.0
    }
}

/// Genes ordered by decreasing `|statistic|` of `treated` versus `control`, ties by index.
pub fn rank_genes(treated: &Array2<f64>, control: &Array2<f64>, test: DegTest) -> Vec<usize> {
    let scores: Vec<f64> = (0..treated.ncols())
        .map(|g| {
            let a = treated.column(g).to_vec();
            let b = control.column(g).to_vec();
            match test {
                DegTest::Welch => welch_t(&a, &b),
                DegTest::MannWhitney => mann_whitney_z(&a, &b),
            }
            .abs()
        })
        .collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegReport {
    /// Mean over groups; `None` when every group was skipped.
    pub mse: Option<f64>,
    pub top_k: usize,
    pub top_k_clamped: bool,
    pub groups_used: usize,
    /// `covariate/treatment` names of groups without controls.
    pub groups_skipped: Vec<String>,
}

/// Per covariate×treatment group of the predicted rows: rank genes by the
/// observed treated-versus-control statistic, keep the top `k`, and score
/// the squared error between mean predicted and mean observed expression
/// on those genes. `predictions[i]` is the prediction for dataset row `rows[i]`.
pub fn deg_mse(ds: &Dataset, predictions: &Array2<f64>, rows: &[usize], top_k: usize, test: DegTest) -> Result<DegReport> {
    if predictions.nrows() != rows.len() {
        return Err(FcrError::dim("prediction rows", rows.len(), predictions.nrows()));
    }
    if predictions.ncols() != ds.n_genes() {
        return Err(FcrError::dim("prediction genes", ds.n_genes(), predictions.ncols()));
    }
    let k = top_k.min(ds.n_genes());
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &r) in rows.iter().enumerate() {
        groups
            .entry((ds.covariates.codes[r], ds.treatments.codes[r]))
            .or_default()
            .push(i);
    }
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for ((c, t), members) in groups {
        let controls: Vec<usize> = (0..ds.n_cells())
            .filter(|&r| ds.control_mask[r] && ds.covariates.codes[r] == c)
            .collect();
        if controls.is_empty() {
            skipped.push(format!("{}/{}", ds.covariates.levels[c], ds.treatments.levels[t]));
            continue;
        }
        let observed_rows: Vec<usize> = members.iter().map(|&i| rows[i]).collect();
        let observed = ds.outcomes.select(Axis(0), &observed_rows);
        let control = ds.outcomes.select(Axis(0), &controls);
        let genes = &rank_genes(&observed, &control, test)[..k];
        let pred = predictions.select(Axis(0), &members);
        let (pm, om) = (pred.mean_axis(Axis(0)).unwrap(), observed.mean_axis(Axis(0)).unwrap());
        let mse = genes.iter().map(|&g| (pm[g] - om[g]).powi(2)).sum::<f64>() / k.max(1) as f64;
        total += mse;
        used += 1;
    }
    Ok(DegReport {
        mse: (used > 0).then(|| total / used as f64),
        top_k: k,
        top_k_clamped: k < top_k,
        groups_used: used,
        groups_skipped: skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPrediction {
    /// One row per paired control cell.
    pub predictions: Array2<f64>,
    pub control_rows: Vec<usize>,
    pub reference_rows: Vec<usize>,
    /// Control rows without a reference of the same covariate.
    pub skipped: Vec<usize>,
}

/// The `k`-th control of each covariate level pairs with the `(k mod n)`-th
/// reference of that level.
pub fn pair_by_covariate(ds: &Dataset, control_rows: &[usize], reference_rows: &[usize]) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut refs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in reference_rows {
        refs.entry(ds.covariates.codes[r]).or_default().push(r);
    }
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for &c in control_rows {
        let level = ds.covariates.codes[c];
        match refs.get(&level) {
            Some(list) => {
                let k = seen.entry(level).or_insert(0);
                pairs.push((c, list[*k % list.len()]));
                *k += 1;
            }
            None => skipped.push(c),
        }
    }
    (pairs, skipped)
}

/// `ŷ = g(z_x⁰, z_tx, z_t)` with posterior means: the covariate block of
/// each control cell combined with the treatment-dependent blocks of a
/// reference treated cell sharing its covariate.
pub fn counterfactual_predict(
    model: &FcrModel,
    ds: &Dataset,
    control_rows: &[usize],
    reference_rows: &[usize],
) -> Result<CounterfactualPrediction> {
    model.config.check_dataset(ds)?;
    for &r in control_rows.iter().chain(reference_rows) {
        if r >= ds.n_cells() {
            return Err(FcrError::Index {
                index: r,
                len: ds.n_cells(),
            });
        }
    }
    let (pairs, skipped) = pair_by_covariate(ds, control_rows, reference_rows);
    let controls: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let references: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let predictions = if pairs.is_empty() {
        Array2::zeros((0, ds.n_genes()))
    } else {
        let c = model.encode_rows(ds, &controls)?;
        let r = model.encode_rows(ds, &references)?;
        let z = concatenate(Axis(1), &[c.x_mean.view(), r.tx_mean.view(), r.t_mean.view()]).expect("rows agree");
        model.decode_batch(&z)?
    };
    Ok(CounterfactualPrediction {
        predictions,
        control_rows: controls,
        reference_rows: references,
        skipped,
    })
}

/// Noise-free synthetic outcome of control `i` under reference `j`:
/// the generating mixer applied to `(z_x of i, z_tx of j, z_t of j)`.
pub fn synthetic_counterfactual_truth(ds: &Dataset, pairs: &[(usize, usize)], n_x: usize) -> Result<Array2<f64>> {
    let truth = ds
        .truth
        .as_ref()
        .ok_or_else(|| FcrError::Precondition("dataset has no ground-truth latents".into()))?;
    let mixer = truth
        .mixer
        .as_ref()
        .ok_or_else(|| FcrError::Precondition("dataset has no generating mixer".into()))?;
    let z = &truth.latents;
    let rows: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(i, j)| {
            let mut v = z.row(i).slice(ndarray::s![..n_x]).to_vec();
            v.extend(z.row(j).slice(ndarray::s![n_x..]).iter());
            v
        })
        .collect();
    let flat: Vec<f64> = rows.concat();
    let zc = Array2::from_shape_vec((pairs.len(), z.ncols()), flat).expect("shape");
    Ok(mixer.apply(&zc))
}
