//! Gaussian kernel matrices with median-heuristic bandwidths.

use ndarray::{Array2, Axis};

fn sq_dists(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = x.dot(&x.t());
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (norms[i] + norms[j] - 2.0 * gram[[i, j]]).max(0.0)
        }
    })
}

/// Median of the positive pairwise distances, falling back to their mean
/// when more than half the pairs coincide. `None` when every row is equal.
pub fn median_distance(x: &Array2<f64>) -> Option<f64> {
    let d = sq_dists(x);
    let n = x.nrows();
    let mut all: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            all.push(d[[i, j]].sqrt());
        }
    }
    let positive: Vec<f64> = all.iter().copied().filter(|v| *v > 0.0).collect();
    if positive.is_empty() {
        return None;
    }
    let mid = all.len() / 2;
    all.select_nth_unstable_by(mid, f64::total_cmp);
    let median = all[mid];
    if median > 0.0 {
        Some(median)
    } else {
        Some(positive.iter().sum::<f64>() / positive.len() as f64)
    }
}

/// `exp(−‖a−b‖² / (2σ²))` with σ the median distance; the all-ones matrix
/// for constant input.
pub fn gaussian_kernel(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    match median_distance(x) {
        None => Array2::ones((n, n)),
        Some(sigma) => {
            let s2 = 2.0 * sigma * sigma;
            sq_dists(x).mapv(|d| (-d / s2).exp())
        }
    }
}

/// `H K H` with `H = I − 11ᵀ/n`.
pub fn center(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows() as f64;
    let row_means = k.mean_axis(Axis(1)).expect("nonempty");
    let col_means = k.mean_axis(Axis(0)).expect("nonempty");
    let grand = k.sum() / (n * n);
    let mut out = k.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    out
}

/// Per-column z-scores; constant columns become zero.
pub fn standardize_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    let n = x.nrows() as f64;
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
    }
    out
}

/// A column vector of labels or scalars as an `n × 1` matrix.
pub fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn centered_rows_sum_to_zero() {
        let k = gaussian_kernel(&array![[0.0], [1.0], [3.0], [3.5]]);
        let c = center(&k);
        for r in c.rows() {
            assert!(r.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn median_fallback() {
        let x = array![[0.0], [0.0], [0.0], [1.0]];
        assert_eq!(median_distance(&x), Some(1.0));
        assert_eq!(median_distance(&array![[2.0], [2.0]]), None);
    }
}
