//! Kernel conditional independence test with a moment-matched gamma null.

use nalgebra::DMatrix;
use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use super::kernel::{center, gaussian_kernel, standardize_columns};
use crate::error::{FcrError, Result};

pub const KCI_LAMBDA: f64 = 1e-3;
const KCI_LAMBDA_MAX: f64 = 1e-1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KciResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Ridge actually used for residualization.
    pub lambda: f64,
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `λ (K + λI)⁻¹`, raising λ by decades when the factorization fails.
fn residualizer(kz: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = kz.nrows();
    let base = to_na(kz);
    let mut lambda = KCI_LAMBDA;
    while lambda <= KCI_LAMBDA_MAX * (1.0 + 1e-9) {
        let reg = &base + DMatrix::identity(n, n) * lambda;
        if let Some(chol) = reg.cholesky() {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return Ok((from_na(&(inv * lambda)), lambda));
            }
        }
        lambda *= 10.0;
    }
    Err(FcrError::IllConditioned { lambda: KCI_LAMBDA_MAX })
}

/// Tests `X ⫫ Y | Z`. Inputs are standardized per column; the kernel on X
/// also sees `Z/2`, following the augmented-conditioning construction.
pub fn kci_test(x: &Array2<f64>, y: &Array2<f64>, z: &Array2<f64>) -> Result<KciResult> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(FcrError::dim("kci rows of Y", n, y.nrows()));
    }
    if z.nrows() != n {
        return Err(FcrError::dim("kci rows of Z", n, z.nrows()));
    }
    if n < 5 {
        return Err(FcrError::Precondition(format!("kci needs at least 5 rows, got {n}")));
    }
    let (xs, ys, zs) = (standardize_columns(x), standardize_columns(y), standardize_columns(z));
    let xz = concatenate(Axis(1), &[xs.view(), zs.mapv(|v| 0.5 * v).view()]).expect("rows agree");
    let kx = center(&gaussian_kernel(&xz));
    let ky = center(&gaussian_kernel(&ys));
    let kz = center(&gaussian_kernel(&zs));
    let (rz, lambda) = residualizer(&kz)?;
    let kxz = rz.dot(&kx).dot(&rz);
    let kyz = rz.dot(&ky).dot(&rz);
    let prod = &kxz * &kyz;
    let statistic = prod.sum();
    let mean: f64 = (0..n).map(|i| prod[[i, i]]).sum();
    let var = 2.0 * prod.iter().map(|v| v * v).sum::<f64>();
    let p_value = if mean <= 0.0 || var <= 0.0 || !mean.is_finite() || !var.is_finite() {
        1.0
    } else {
        let shape = mean * mean / var;
        let scale = var / mean;
        let g = Gamma::new(shape, 1.0 / scale)
            .map_err(|e| FcrError::Domain(format!("gamma null: {e}")))?;
        (1.0 - g.cdf(statistic)).clamp(0.0, 1.0)
    };
    Ok(KciResult {
        statistic,
        p_value,
        lambda,
    })
}
