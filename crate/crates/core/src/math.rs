//! Shared latent-space types and the closed-form primitives every other
//! module builds on: diagonal-Gaussian KL, cosine similarity,
//! reparameterized sampling and clamped cross-entropy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FcrError, Result};

/// Lower clamp applied to every probability that enters a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Widths of the three latent blocks `z = [z_x, z_tx, z_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentDims {
    pub n_x: usize,
    pub n_tx: usize,
    pub n_t: usize,
}

impl LatentDims {
    pub fn new(n_x: usize, n_tx: usize, n_t: usize) -> Result<Self> {
        let dims = LatentDims { n_x, n_tx, n_t };
        if dims.total() == 0 {
            return Err(FcrError::Config("latent dimension n must be at least 1".into()));
        }
        Ok(dims)
    }

    pub fn total(&self) -> usize {
        self.n_x + self.n_tx + self.n_t
    }

    /// Column range of `z_x` inside the stacked latent vector.
    pub fn x_range(&self) -> std::ops::Range<usize> {
        0..self.n_x
    }

    pub fn tx_range(&self) -> std::ops::Range<usize> {
        self.n_x..self.n_x + self.n_tx
    }

    pub fn t_range(&self) -> std::ops::Range<usize> {
        self.n_x + self.n_tx..self.total()
    }
}

/// Diagonal Gaussian parameterized by mean and log-scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_scale: Vec<f64>) -> Result<Self> {
        if mean.len() != log_scale.len() {
            return Err(FcrError::dim("DiagGaussian", mean.len(), log_scale.len()));
        }
        if mean.iter().chain(&log_scale).any(|v| !v.is_finite()) {
            return Err(FcrError::Domain("non-finite Gaussian parameter".into()));
        }
        Ok(DiagGaussian { mean, log_scale })
    }

    /// Builds from explicit standard deviations, which must be strictly positive.
    pub fn from_scale(mean: Vec<f64>, scale: &[f64]) -> Result<Self> {
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(FcrError::Domain(format!("scale must be positive, got {s}")));
        }
        DiagGaussian::new(mean, scale.iter().map(|s| s.ln()).collect())
    }

    pub fn standard(len: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; len],
            log_scale: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn scale(&self) -> Vec<f64> {
        self.log_scale.iter().map(|l| l.exp()).collect()
    }

    /// Log-density at `z`, summed over components.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.log_scale)
            .zip(z)
            .map(|((m, ls), z)| {
                let u = (z - m) / ls.exp();
                -0.5 * u * u - ls - half_log_2pi
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.len()).map(|_| rng.sample(StandardNormal)).collect();
        reparameterize(self, &eps).expect("eps sized to the distribution")
    }
}

/// A single latent draw split by block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub z_x: Vec<f64>,
    pub z_tx: Vec<f64>,
    pub z_t: Vec<f64>,
}

impl LatentSample {
    pub fn check(&self, dims: &LatentDims) -> Result<()> {
        if self.z_x.len() != dims.n_x {
            return Err(FcrError::dim("z_x", dims.n_x, self.z_x.len()));
        }
        if self.z_tx.len() != dims.n_tx {
            return Err(FcrError::dim("z_tx", dims.n_tx, self.z_tx.len()));
        }
        if self.z_t.len() != dims.n_t {
            return Err(FcrError::dim("z_t", dims.n_t, self.z_t.len()));
        }
        Ok(())
    }

    /// Concatenation in `[z_x, z_tx, z_t]` order.
    pub fn stacked(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.z_x.len() + self.z_tx.len() + self.z_t.len());
        z.extend_from_slice(&self.z_x);
        z.extend_from_slice(&self.z_tx);
        z.extend_from_slice(&self.z_t);
        z
    }
}

fn check_pair(q: &DiagGaussian, p: &DiagGaussian) -> Result<()> {
    if q.len() != p.len() {
        return Err(FcrError::dim("kl_diag_gaussian", q.len(), p.len()));
    }
    Ok(())
}

/// KL(q ‖ p) for diagonal Gaussians, summed over components.
pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    check_pair(q, p)?;
    let mut kl = 0.0;
    for i in 0..q.len() {
        let var_ratio = (2.0 * (q.log_scale[i] - p.log_scale[i])).exp();
        let d = q.mean[i] - p.mean[i];
        let mahal = d * d * (-2.0 * p.log_scale[i]).exp();
        kl += p.log_scale[i] - q.log_scale[i] + 0.5 * (var_ratio + mahal) - 0.5;
    }
    // Rounding can leave a tiny negative residue when q == p.
    Ok(kl.max(0.0))
}

/// Gradient of [`kl_diag_gaussian`] with respect to each parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGradient {
    pub q_mean: Vec<f64>,
    pub q_log_scale: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub p_log_scale: Vec<f64>,
}

pub fn kl_diag_gaussian_grad(q: &DiagGaussian, p: &DiagGaussian) -> Result<KlGradient> {
    check_pair(q, p)?;
    let n = q.len();
    let mut g = KlGradient {
        q_mean: vec![0.0; n],
        q_log_scale: vec![0.0; n],
        p_mean: vec![0.0; n],
        p_log_scale: vec![0.0; n],
    };
    for i in 0..n {
        let inv_var_p = (-2.0 * p.log_scale[i]).exp();
        let var_q = (2.0 * q.log_scale[i]).exp();
        let d = q.mean[i] - p.mean[i];
        g.q_mean[i] = d * inv_var_p;
        g.p_mean[i] = -d * inv_var_p;
        g.q_log_scale[i] = var_q * inv_var_p - 1.0;
        g.p_log_scale[i] = 1.0 - (var_q + d * d) * inv_var_p;
    }
    Ok(g)
}

/// Cosine similarity with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input has zero norm; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(FcrError::dim("cosine_similarity", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// `mean + scale ⊙ eps`.
pub fn reparameterize(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.len() {
        return Err(FcrError::dim("reparameterize", g.len(), eps.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_scale)
        .zip(eps)
        .map(|((m, ls), e)| m + ls.exp() * e)
        .collect())
}

/// `−ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs.get(label).ok_or(FcrError::Index {
        index: label,
        len: probs.len(),
    })?;
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(FcrError::Domain(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(-p.clamp(PROB_FLOOR, 1.0).ln())
}

/// Gradient of [`cross_entropy`] with respect to `probs` (zero where clamped).
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    cross_entropy(probs, label)?;
    let mut g = vec![0.0; probs.len()];
    let p = probs[label];
    if p > PROB_FLOOR && p <= 1.0 {
        g[label] = -1.0 / p;
    }
    Ok(g)
}
