//! Synthetic perturbation data with known latents, and the numerical
//! rank diagnostic for the interaction-block identifiability condition.
//!
//! The generating process draws `t` and `x` uniformly from finite supports,
//! then `z_x ~ N(x/2, 1)`, `z_t ~ N(t/2, 1)` and `z_tx` from an
//! [`InteractionLaw`]. Outcomes are `y = g(z)` for a fixed random
//! leaky-rectified mixer `g`, optionally z-scored per gene.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth, Labels};
use crate::error::{FcrError, Result};
use crate::math::LatentDims;

/// Conditional law of each interaction component given `(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionLaw {
    /// `z_tx,j ~ N(coeffs_j · x · t, 1)`.
    Product { coeffs: Vec<f64> },
    /// `z_tx,j ~ N(sin((j+1)·x·t/500), 1 + 0.5·(j+1)·|t − x/1000|)` with `j` zero-based.
    Nonlinear,
}

impl InteractionLaw {
    pub fn mean(&self, j: usize, t: f64, x: f64) -> f64 {
        match self {
            InteractionLaw::Product { coeffs } => coeffs[j] * x * t,
            InteractionLaw::Nonlinear => ((j + 1) as f64 * x * t / 500.0).sin(),
        }
    }

    pub fn variance(&self, j: usize, t: f64, x: f64) -> f64 {
        match self {
            InteractionLaw::Product { .. } => 1.0,
            InteractionLaw::Nonlinear => 1.0 + 0.5 * (j + 1) as f64 * (t - x / 1000.0).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sample_count: usize,
    /// First entry is the control treatment `t_0`.
    pub t_support: Vec<f64>,
    /// First entry is the reference covariate `x_0` of the rank diagnostic.
    pub x_support: Vec<f64>,
    pub dims: LatentDims,
    pub y_dim: usize,
    pub mixer_depth: usize,
    pub mixer_slope: f64,
    pub interaction: InteractionLaw,
    /// Z-score each outcome column after mixing.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_count: 5000,
            t_support: vec![1.0, 2.0, 3.0],
            x_support: vec![100.0, 1000.0, 5000.0],
            dims: LatentDims {
                n_x: 1,
                n_tx: 4,
                n_t: 1,
            },
            y_dim: 96,
            mixer_depth: 2,
            mixer_slope: 0.2,
            interaction: InteractionLaw::Product {
                coeffs: vec![1.0; 4],
            },
            standardize: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Configuration whose interaction law satisfies the linear-independence
    /// condition: nonlinear means, heteroscedastic variances and five
    /// covariate levels chosen so no `x/1000` coincides with a treatment level.
    pub fn nonlinear() -> Self {
        SimConfig {
            x_support: vec![100.0, 250.0, 750.0, 1000.0, 5000.0],
            interaction: InteractionLaw::Nonlinear,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_support.is_empty() || self.x_support.is_empty() {
            return Err(FcrError::Config("t and x supports must be nonempty".into()));
        }
        if self.sample_count == 0 {
            return Err(FcrError::Config("sample_count must be at least 1".into()));
        }
        if self.dims.total() == 0 {
            return Err(FcrError::Config("latent dimension must be at least 1".into()));
        }
        if self.y_dim < self.dims.total() {
            return Err(FcrError::Config(format!(
                "y_dim {} must be at least the latent dimension {}",
                self.y_dim,
                self.dims.total()
            )));
        }
        if self.mixer_depth == 0 {
            return Err(FcrError::Config("mixer_depth must be at least 1".into()));
        }
        if let InteractionLaw::Product { coeffs } = &self.interaction {
            if coeffs.len() != self.dims.n_tx {
                return Err(FcrError::Config(format!(
                    "interaction coefficients have length {}, n_tx is {}",
                    coeffs.len(),
                    self.dims.n_tx
                )));
            }
        }
        let all = self.t_support.iter().chain(&self.x_support);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(FcrError::Config("supports must be finite".into()));
        }
        Ok(())
    }
}

/// The fixed random map from latents to outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixer {
    /// Layer weights, each `input × output`.
    pub weights: Vec<Array2<f64>>,
    pub slope: f64,
    /// Per-column `(y − shift) / scale` applied after the last layer.
    pub shift: Option<Array1<f64>>,
    pub scale: Option<Array1<f64>>,
}

impl Mixer {
    fn random<R: Rng + ?Sized>(n: usize, y_dim: usize, depth: usize, slope: f64, rng: &mut R) -> Self {
        let mut weights = Vec::with_capacity(depth);
        let mut fan_in = n;
        for _ in 0..depth {
            let mut w = Array2::from_shape_simple_fn((fan_in, y_dim), || rng.sample::<f64, _>(StandardNormal));
            // Unit-norm output units.
            for mut col in w.columns_mut() {
                let norm = col.dot(&col).sqrt();
                col.mapv_inplace(|v| v / norm);
            }
            weights.push(w);
            fan_in = y_dim;
        }
        Mixer {
            weights,
            slope,
            shift: None,
            scale: None,
        }
    }

    /// Raw mixer output before standardization.
    pub fn raw(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut h = z.clone();
        for (i, w) in self.weights.iter().enumerate() {
            h = h.dot(w);
            if i + 1 < self.weights.len() {
                let s = self.slope;
                h.mapv_inplace(|v| if v > 0.0 { v } else { s * v });
            }
        }
        h
    }

    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut y = self.raw(z);
        if let (Some(shift), Some(scale)) = (&self.shift, &self.scale) {
            y -= shift;
            y /= scale;
        }
        y
    }
}

fn format_level(v: f64) -> String {
    format!("{v}")
}

/// Draws a dataset with ground-truth latents `[z_x, z_tx, z_t]`.
pub fn generate_synthetic(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.dims;
    let n = cfg.sample_count;
    let mut mixer = Mixer::random(dims.total(), cfg.y_dim, cfg.mixer_depth, cfg.mixer_slope, &mut rng);

    let mut latents = Array2::zeros((n, dims.total()));
    let mut t_vals = Vec::with_capacity(n);
    let mut x_vals = Vec::with_capacity(n);
    for i in 0..n {
        let t = cfg.t_support[rng.random_range(0..cfg.t_support.len())];
        let x = cfg.x_support[rng.random_range(0..cfg.x_support.len())];
        let mut row = latents.row_mut(i);
        for c in dims.x_range() {
            row[c] = x / 2.0 + rng.sample::<f64, _>(StandardNormal);
        }
        for (j, c) in dims.tx_range().enumerate() {
            let sd = cfg.interaction.variance(j, t, x).sqrt();
            row[c] = cfg.interaction.mean(j, t, x) + sd * rng.sample::<f64, _>(StandardNormal);
        }
        for c in dims.t_range() {
            row[c] = t / 2.0 + rng.sample::<f64, _>(StandardNormal);
        }
        t_vals.push(format_level(t));
        x_vals.push(format_level(x));
    }

    let mut y = mixer.raw(&latents);
    if cfg.standardize {
        let shift = y.mean_axis(Axis(0)).expect("at least one row");
        let scale = y.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        y -= &shift;
        y /= &scale;
        mixer.shift = Some(shift);
        mixer.scale = Some(scale);
    }

    let covariates = Labels::from_strings(&x_vals);
    let mut treatments = Labels::from_strings(&t_vals);
    // Keep the control level in the table even if no row drew it.
    let control_name = format_level(cfg.t_support[0]);
    if treatments.level_of(&control_name).is_none() {
        let mut all = t_vals.clone();
        all.push(control_name.clone());
        let full = Labels::from_strings(&all);
        treatments = Labels::new(full.codes[..n].to_vec(), full.levels)?;
    }
    let control = treatments.level_of(&control_name);
    let mut ds = Dataset::new(y, covariates, treatments, control)?;
    ds.truth = Some(GroundTruth {
        latents,
        mixer: Some(mixer),
    });
    Ok(ds)
}

/// Outcome of the interaction-rank diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub matrix_rank: usize,
    pub required_rank: usize,
    /// Largest over smallest singular value; infinite when rank-deficient.
    pub condition_number: f64,
    pub satisfied: bool,
    pub singular_values: Vec<f64>,
}

/// Relative singular-value threshold for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Point `z_tx` at which the score derivatives are evaluated.
const EVAL_POINT: f64 = 0.0;

/// First and second `z`-derivatives of the Gaussian log-density of each
/// interaction component: `[−(z−μ_j)/σ_j², …, −1/σ_j², …]`.
fn score_vector(law: &InteractionLaw, n_tx: usize, t: f64, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n_tx];
    for j in 0..n_tx {
        let var = law.variance(j, t, x);
        v[j] = -(EVAL_POINT - law.mean(j, t, x)) / var;
        v[n_tx + j] = -1.0 / var;
    }
    v
}

/// Stacks `v(t_i,x_i) + v(t_0,x_0) − v(t_0,x_i) − v(t_i,x_0)` over every
/// non-control pair of the design and reports its numerical rank.
pub fn check_interaction_rank(cfg: &SimConfig) -> Result<RankReport> {
    cfg.validate()?;
    let n_tx = cfg.dims.n_tx;
    let required = 2 * n_tx;
    if n_tx == 0 {
        return Ok(RankReport {
            matrix_rank: 0,
            required_rank: 0,
            condition_number: 1.0,
            satisfied: true,
            singular_values: vec![],
        });
    }
    let (t0, x0) = (cfg.t_support[0], cfg.x_support[0]);
    let pairs: Vec<(f64, f64)> = cfg
        .t_support
        .iter()
        .flat_map(|&t| cfg.x_support.iter().map(move |&x| (t, x)))
        .filter(|&(t, x)| !(t == t0 && x == x0))
        .collect();
    if pairs.len() < required {
        return Err(FcrError::DesignInsufficient {
            required,
            found: pairs.len(),
        });
    }
    let law = &cfg.interaction;
    let v = |t, x| score_vector(law, n_tx, t, x);
    let base = v(t0, x0);
    let mut rows = Vec::with_capacity(pairs.len() * required);
    for &(t, x) in &pairs {
        let (vi, v0i, vi0) = (v(t, x), v(t0, x), v(t, x0));
        rows.extend((0..required).map(|k| vi[k] + base[k] - v0i[k] - vi0[k]));
    }
    let m = DMatrix::from_row_slice(pairs.len(), required, &rows);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let max = sv.first().copied().unwrap_or(0.0);
    let rank = if max > 0.0 {
        sv.iter().filter(|s| **s > RANK_TOLERANCE * max).count()
    } else {
        0
    };
    let min = sv.last().copied().unwrap_or(0.0);
    let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };
    Ok(RankReport {
        matrix_rank: rank,
        required_rank: required,
        condition_number,
        satisfied: rank == required,
        singular_values: sv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let ds = generate_synthetic(&SimConfig::default()).unwrap();
        assert_eq!(ds.n_cells(), 5000);
        assert_eq!(ds.n_genes(), 96);
        assert_eq!(ds.truth.as_ref().unwrap().latents.ncols(), 6);
        assert_eq!(ds.treatments.levels, vec!["1", "2", "3"]);
        assert_eq!(ds.control_level, Some(0));
    }

    #[test]
    fn single_row() {
        let cfg = SimConfig {
            sample_count: 1,
            ..SimConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.n_cells(), 1);
        ds.validate().unwrap();
        assert!(ds.control_level.is_some());
    }

    #[test]
    fn invalid_configs() {
        let bad = SimConfig {
            y_dim: 3,
            ..SimConfig::default()
        };
        assert!(matches!(generate_synthetic(&bad), Err(FcrError::Config(_))));
        let bad = SimConfig {
            t_support: vec![],
            ..SimConfig::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SimConfig {
            interaction: InteractionLaw::Product { coeffs: vec![1.0] },
            ..SimConfig::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn empty_interaction_block() {
        let cfg = SimConfig {
            dims: LatentDims {
                n_x: 1,
                n_tx: 0,
                n_t: 1,
            },
            interaction: InteractionLaw::Product { coeffs: vec![] },
            ..SimConfig::default()
        };
        let r = check_interaction_rank(&cfg).unwrap();
        assert_eq!((r.matrix_rank, r.required_rank, r.satisfied), (0, 0, true));
    }

    #[test]
    fn too_few_pairs() {
        let cfg = SimConfig {
            t_support: vec![1.0, 2.0],
            x_support: vec![100.0, 1000.0],
            ..SimConfig::default()
        };
        assert!(matches!(
            check_interaction_rank(&cfg),
            Err(FcrError::DesignInsufficient {
                required: 8,
                found: 3
            })
        ));
    }

    #[test]
    fn homoscedastic_product_means_are_rank_deficient() {
        for coeffs in [vec![1.0; 4], vec![0.5, -2.0, 3.0, 1.5]] {
            let cfg = SimConfig {
                x_support: vec![100.0, 1000.0, 2000.0, 5000.0],
                interaction: InteractionLaw::Product { coeffs },
                ..SimConfig::default()
            };
            let r = check_interaction_rank(&cfg).unwrap();
            assert!(r.matrix_rank <= cfg.dims.n_tx);
            assert!(!r.satisfied);
        }
    }
}
