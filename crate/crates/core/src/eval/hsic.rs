use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{center, gaussian_kernel, median_distance};
use crate::error::{FcrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsicResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Either input was constant, so the statistic is 0 by definition.
    pub constant_input: bool,
}

/// Biased HSIC `trace(K H L H)/(m−1)²` with a row-permutation null.
/// The p-value is `(1 + #{null ≥ observed}) / (1 + B)`.
pub fn hsic(x: &Array2<f64>, y: &Array2<f64>, n_permutations: usize, seed: u64) -> Result<HsicResult> {
    let m = x.nrows();
    if y.nrows() != m {
        return Err(FcrError::dim("hsic rows", m, y.nrows()));
    }
    if m < 5 {
        return Err(FcrError::Precondition(format!("hsic needs at least 5 rows, got {m}")));
    }
    if median_distance(x).is_none() || median_distance(y).is_none() {
        return Ok(HsicResult {
            statistic: 0.0,
            p_value: 1.0,
            constant_input: true,
        });
    }
    let (kc, lc) = (center(&gaussian_kernel(x)), center(&gaussian_kernel(y)));
    let statistic = paired_trace(&kc, &lc, None);
    let exceed = permutation_stats(&kc, &lc, n_permutations, seed)
        .into_iter()
        .filter(|s| *s >= statistic)
        .count();
    Ok(HsicResult {
        statistic,
        p_value: (1 + exceed) as f64 / (1 + n_permutations) as f64,
        constant_input: false,
    })
}

/// The permutation null statistics themselves, for calibration checks.
pub fn hsic_null(x: &Array2<f64>, y: &Array2<f64>, n_permutations: usize, seed: u64) -> Result<Vec<f64>> {
    let m = x.nrows();
    if y.nrows() != m {
        return Err(FcrError::dim("hsic rows", m, y.nrows()));
    }
    let (kc, lc) = (center(&gaussian_kernel(x)), center(&gaussian_kernel(y)));
    Ok(permutation_stats(&kc, &lc, n_permutations, seed))
}

/// `Σ Kc ∘ Lc[π, π] / (m−1)²`, which is `trace(Kc Lc)` for symmetric inputs.
fn paired_trace(kc: &Array2<f64>, lc: &Array2<f64>, perm: Option<&[usize]>) -> f64 {
    let m = kc.nrows();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            let l = match perm {
                Some(p) => lc[[p[i], p[j]]],
                None => lc[[i, j]],
            };
            s += kc[[i, j]] * l;
        }
    }
    s / ((m - 1) * (m - 1)) as f64
}

fn permutation_stats(kc: &Array2<f64>, lc: &Array2<f64>, n_permutations: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..kc.nrows()).collect();
    (0..n_permutations)
        .map(|_| {
            perm.shuffle(&mut rng);
            paired_trace(kc, lc, Some(&perm))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_input_is_zero() {
        let x = Array2::from_elem((6, 1), 3.0);
        let y = array![[1.0], [2.0], [0.5], [4.0], [3.0], [2.2]];
        let r = hsic(&x, &y, 10, 0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.constant_input);
    }

    #[test]
    fn too_few_rows() {
        let x = Array2::zeros((4, 1));
        assert!(matches!(hsic(&x, &x, 5, 0), Err(FcrError::Precondition(_))));
    }
}
