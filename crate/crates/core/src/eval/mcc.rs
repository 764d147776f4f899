use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{FcrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// Spearman: Pearson on average-tied ranks.
    #[default]
    Rank,
    /// Pearson.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// `permutation[i]` is the estimated column matched to true column `i`.
    pub permutation: Vec<usize>,
    /// `|corr(true_i, est_j)|`.
    pub abs_correlation: Array2<f64>,
    pub mcc: f64,
    /// Columns with zero variance, whose correlations were set to 0.
    pub constant_columns: usize,
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(v: ArrayView1<f64>) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn standardize(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
    if ss <= 0.0 || !ss.is_finite() {
        return None;
    }
    let sd = ss.sqrt();
    Some(col.iter().map(|v| (v - mean) / sd).collect())
}

/// Minimum-cost assignment of rows to columns for a square cost matrix.
/// Returns `assign[row] = col`.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "square cost matrix");
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based sentinel column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Mean absolute correlation after optimal one-to-one matching of columns.
pub fn mcc(z_true: &Array2<f64>, z_est: &Array2<f64>, kind: Correlation) -> Result<AssignmentResult> {
    if z_true.nrows() != z_est.nrows() {
        return Err(FcrError::dim("mcc rows", z_true.nrows(), z_est.nrows()));
    }
    if z_true.ncols() != z_est.ncols() {
        return Err(FcrError::dim("mcc columns", z_true.ncols(), z_est.ncols()));
    }
    if z_true.nrows() < 2 || z_true.ncols() == 0 {
        return Err(FcrError::Precondition(
            "mcc needs at least two rows and one column".into(),
        ));
    }
    let prep = |m: &Array2<f64>| -> Vec<Option<Vec<f64>>> {
        m.columns()
            .into_iter()
            .map(|c| match kind {
                Correlation::Rank => standardize(&average_ranks(c)),
                Correlation::Linear => standardize(&c.to_vec()),
            })
            .collect()
    };
    let (a, b) = (prep(z_true), prep(z_est));
    let constant_columns = a.iter().chain(&b).filter(|c| c.is_none()).count();
    let d = a.len();
    let corr = Array2::from_shape_fn((d, d), |(i, j)| match (&a[i], &b[j]) {
        (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>().abs().min(1.0),
        _ => 0.0,
    });
    let permutation = hungarian(&corr.mapv(|c| -c));
    let mcc = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| corr[[i, j]])
        .sum::<f64>()
        / d as f64;
    Ok(AssignmentResult {
        permutation,
        abs_correlation: corr,
        mcc,
        constant_columns,
    })
}
