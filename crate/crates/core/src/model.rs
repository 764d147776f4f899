//! The FCR networks: factorized conditional priors with a Hadamard
//! interaction prior, mean-field posteriors, a deterministic decoder, the
//! treatment classifier and the two permutation discriminators.

use ndarray::{s, Array2};
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::math::{DiagGaussian, LatentDims, LatentSample};
use crate::nn::{sigmoid, Mlp, ParamId, ParamStore, Tape, Var};

/// Bounds applied to every network-produced log-scale.
pub const LOG_SCALE_MIN: f64 = -10.0;
pub const LOG_SCALE_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub depth: usize,
    /// Width `m` of the covariate and treatment embeddings.
    pub embed_width: usize,
    pub slope: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: 128,
            depth: 2,
            embed_width: 64,
            slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: LatentDims,
    pub n_genes: usize,
    pub covariate_levels: Vec<String>,
    pub treatment_levels: Vec<String>,
    pub control_level: Option<usize>,
    pub arch: Architecture,
    pub init_seed: u64,
    /// Fixed per-gene affine map between raw outcomes and network units.
    /// The likelihood is always evaluated on raw outcomes.
    #[serde(default)]
    pub scaling: Option<GeneScaling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl GeneScaling {
    /// Column means and standard deviations (unit where a gene is constant).
    pub fn from_outcomes(y: &Array2<f64>) -> Self {
        let n = y.nrows().max(1) as f64;
        let shift: Vec<f64> = y.columns().into_iter().map(|c| c.sum() / n).collect();
        let scale = y
            .columns()
            .into_iter()
            .zip(&shift)
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        GeneScaling { shift, scale }
    }

    fn shift_row(&self) -> Array2<f64> {
        row(&self.shift)
    }

    fn scale_row(&self) -> Array2<f64> {
        row(&self.scale)
    }
}

impl ModelConfig {
    /// Level tables and gene scaling taken from `ds`.
    pub fn for_dataset(ds: &Dataset, dims: LatentDims, arch: Architecture, init_seed: u64) -> Self {
        ModelConfig {
            scaling: Some(GeneScaling::from_outcomes(&ds.outcomes)),
            dims,
            n_genes: ds.n_genes(),
            covariate_levels: ds.covariates.levels.clone(),
            treatment_levels: ds.treatments.levels.clone(),
            control_level: ds.control_level,
            arch,
            init_seed,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_levels.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.treatment_levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.n_x == 0 || d.n_tx == 0 || d.n_t == 0 {
            return Err(FcrError::Config(
                "the model needs every latent block to have width at least 1".into(),
            ));
        }
        if self.n_genes == 0 || self.n_covariates() == 0 || self.n_treatments() == 0 {
            return Err(FcrError::Config(
                "gene count and level tables must be nonempty".into(),
            ));
        }
        let a = &self.arch;
        if a.hidden == 0 || a.embed_width == 0 {
            return Err(FcrError::Config("hidden and embedding widths must be positive".into()));
        }
        if let Some(sc) = &self.scaling {
            if sc.shift.len() != self.n_genes || sc.scale.len() != self.n_genes {
                return Err(FcrError::dim("gene scaling", self.n_genes, sc.shift.len()));
            }
            if sc.scale.iter().chain(&sc.shift).any(|v| !v.is_finite()) || sc.scale.iter().any(|v| *v <= 0.0) {
                return Err(FcrError::Config("gene scaling must be finite with positive scales".into()));
            }
        }
        if let Some(c) = self.control_level {
            if c >= self.n_treatments() {
                return Err(FcrError::Index {
                    index: c,
                    len: self.n_treatments(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }

    /// Dataset must share this configuration's gene count and level tables.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.n_genes() != self.n_genes {
            return Err(FcrError::dim("dataset gene count", self.n_genes, ds.n_genes()));
        }
        if ds.covariates.levels != self.covariate_levels {
            return Err(FcrError::Incompatible(
                "dataset covariate levels differ from the model's".into(),
            ));
        }
        if ds.treatments.levels != self.treatment_levels {
            return Err(FcrError::Incompatible(
                "dataset treatment levels differ from the model's".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Mean and log-scale of a Gaussian block, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct GaussVars {
    pub mean: Var,
    pub log_scale: Var,
}

/// Per-block Gaussians on a tape, keyed by block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub x: GaussVars,
    pub tx: GaussVars,
    pub t: GaussVars,
}

/// Three Gaussians keyed by block, for a single cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTriple {
    pub x: DiagGaussian,
    pub tx: DiagGaussian,
    pub t: DiagGaussian,
}

pub type PriorTriple = BlockTriple;
pub type PosteriorTriple = BlockTriple;

/// Batched block Gaussians (rows are cells).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBatch {
    pub x_mean: Array2<f64>,
    pub x_log_scale: Array2<f64>,
    pub tx_mean: Array2<f64>,
    pub tx_log_scale: Array2<f64>,
    pub t_mean: Array2<f64>,
    pub t_log_scale: Array2<f64>,
}

impl BlockBatch {
    /// `[z_x, z_tx, z_t]` means side by side.
    pub fn stacked_means(&self) -> Array2<f64> {
        ndarray::concatenate(
            ndarray::Axis(1),
            &[self.x_mean.view(), self.tx_mean.view(), self.t_mean.view()],
        )
        .expect("row counts agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `f_dis_x`: `z_x` versus `z_tx` given `x`.
    X,
    /// `f_dis_t`: `z_t` versus `z_tx` given `t`.
    T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcrModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    prior_x: Mlp,
    prior_t: Mlp,
    embed_x: Mlp,
    embed_t: Mlp,
    prior_tx: Mlp,
    enc_x: Mlp,
    enc_t: Mlp,
    enc_tx: Mlp,
    decoder: Mlp,
    classifier: Mlp,
    dis_x: Mlp,
    dis_t: Mlp,
}

pub fn one_hot(codes: &[usize], n: usize) -> Array2<f64> {
    let mut m = Array2::zeros((codes.len(), n));
    for (i, &c) in codes.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

fn split_gaussian(tape: &mut Tape, out: Var, n: usize) -> GaussVars {
    let mean = tape.slice(out, 0, n);
    let raw = tape.slice(out, n, 2 * n);
    GaussVars {
        mean,
        log_scale: tape.clamp(raw, LOG_SCALE_MIN, LOG_SCALE_MAX),
    }
}

fn split_array(out: Array2<f64>, n: usize) -> (Array2<f64>, Array2<f64>) {
    let mean = out.slice(s![.., ..n]).to_owned();
    let ls = out
        .slice(s![.., n..2 * n])
        .mapv(|v| v.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX));
    (mean, ls)
}

fn row_gaussian(mean: &Array2<f64>, ls: &Array2<f64>) -> DiagGaussian {
    DiagGaussian {
        mean: mean.row(0).to_vec(),
        log_scale: ls.row(0).to_vec(),
    }
}

fn check_width(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(FcrError::dim(context, expected, got));
    }
    Ok(())
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

impl FcrModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let a = &config.arch;
        let d = config.dims;
        let (nx, nt, k) = (config.n_covariates(), config.n_treatments(), config.n_genes);
        let hidden = vec![a.hidden; a.depth];
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend_from_slice(&hidden);
            w.push(output);
            w
        };
        let mut mlp = |store: &mut ParamStore, name: &str, input, output, zero| {
            Mlp::new(store, name, &widths(input, output), a.slope, zero, &mut rng)
        };
        let prior_x = mlp(&mut store, "prior_x", nx, 2 * d.n_x, false);
        let prior_t = mlp(&mut store, "prior_t", nt, 2 * d.n_t, false);
        let embed_x = mlp(&mut store, "embed_x", nx, a.embed_width, false);
        let embed_t = mlp(&mut store, "embed_t", nt, a.embed_width, false);
        let prior_tx = mlp(&mut store, "prior_tx", a.embed_width, 2 * d.n_tx, false);
        let enc_x = mlp(&mut store, "enc_x", k + nx, 2 * d.n_x, false);
        let enc_t = mlp(&mut store, "enc_t", k + nt, 2 * d.n_t, false);
        let enc_tx = mlp(&mut store, "enc_tx", k + nt + nx, 2 * d.n_tx, false);
        let decoder = mlp(&mut store, "decoder", d.total(), k, false);
        let classifier = mlp(&mut store, "classifier", 2 * (d.n_t + d.n_tx), nt, true);
        let dis_x = mlp(&mut store, "dis_x", d.n_x + d.n_tx + nx, 1, true);
        let dis_t = mlp(&mut store, "dis_t", d.n_t + d.n_tx + nt, 1, true);
        Ok(FcrModel {
            config,
            store,
            prior_x,
            prior_t,
            embed_x,
            embed_t,
            prior_tx,
            enc_x,
            enc_t,
            enc_tx,
            decoder,
            classifier,
            dis_x,
            dis_t,
        })
    }

    pub fn dims(&self) -> LatentDims {
        self.config.dims
    }

    /// Parameters minimized by the model step (everything but the discriminators).
    pub fn model_param_ids(&self) -> Vec<ParamId> {
        [
            &self.prior_x,
            &self.prior_t,
            &self.embed_x,
            &self.embed_t,
            &self.prior_tx,
            &self.enc_x,
            &self.enc_t,
            &self.enc_tx,
            &self.decoder,
            &self.classifier,
        ]
        .iter()
        .flat_map(|m| m.param_ids())
        .collect()
    }

    pub fn discriminator_param_ids(&self) -> Vec<ParamId> {
        self.dis_x.param_ids().chain(self.dis_t.param_ids()).collect()
    }

    pub fn classifier_param_ids(&self) -> Vec<ParamId> {
        self.classifier.param_ids().collect()
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        self.decoder.param_ids().collect()
    }

    /// Encoder and prior parameters, excluding decoder and classifier.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        [
            &self.prior_x,
            &self.prior_t,
            &self.embed_x,
            &self.embed_t,
            &self.prior_tx,
            &self.enc_x,
            &self.enc_t,
            &self.enc_tx,
        ]
        .iter()
        .flat_map(|m| m.param_ids())
        .collect()
    }

    // ---- tape builders -------------------------------------------------

    pub fn prior_on_tape(&self, tape: &mut Tape, t_enc: Var, x_enc: Var) -> BlockVars {
        let d = self.config.dims;
        let px = self.prior_x.forward(tape, &self.store, x_enc);
        let pt = self.prior_t.forward(tape, &self.store, t_enc);
        let kx = self.embed_x.forward(tape, &self.store, x_enc);
        let kt = self.embed_t.forward(tape, &self.store, t_enc);
        let h = tape.mul(kx, kt);
        let ptx = self.prior_tx.forward(tape, &self.store, h);
        BlockVars {
            x: split_gaussian(tape, px, d.n_x),
            tx: split_gaussian(tape, ptx, d.n_tx),
            t: split_gaussian(tape, pt, d.n_t),
        }
    }

    pub fn posterior_on_tape(&self, tape: &mut Tape, y: Var, t_enc: Var, x_enc: Var) -> BlockVars {
        let d = self.config.dims;
        let y = match &self.config.scaling {
            Some(sc) => {
                let neg = tape.constant(sc.shift_row().mapv(|v| -v));
                let inv = tape.constant(sc.scale_row().mapv(|v| 1.0 / v));
                let centered = tape.add_row(y, neg);
                let n = tape.value(y).nrows();
                let inv = tape.gather(inv, &vec![0; n]);
                tape.mul(centered, inv)
            }
            None => y,
        };
        let in_x = tape.concat(&[y, x_enc]);
        let in_t = tape.concat(&[y, t_enc]);
        let in_tx = tape.concat(&[y, t_enc, x_enc]);
        let qx = self.enc_x.forward(tape, &self.store, in_x);
        let qt = self.enc_t.forward(tape, &self.store, in_t);
        let qtx = self.enc_tx.forward(tape, &self.store, in_tx);
        BlockVars {
            x: split_gaussian(tape, qx, d.n_x),
            tx: split_gaussian(tape, qtx, d.n_tx),
            t: split_gaussian(tape, qt, d.n_t),
        }
    }

    /// `z` columns in `[z_x, z_tx, z_t]` order.
    pub fn decode_on_tape(&self, tape: &mut Tape, z: Var) -> Var {
        let out = self.decoder.forward(tape, &self.store, z);
        match &self.config.scaling {
            Some(sc) => {
                let n = tape.value(out).nrows();
                let scale = tape.constant(sc.scale_row());
                let scale = tape.gather(scale, &vec![0; n]);
                let shift = tape.constant(sc.shift_row());
                let scaled = tape.mul(out, scale);
                tape.add_row(scaled, shift)
            }
            None => out,
        }
    }

    /// Treatment logits from `[z_t, z_tx, z_t⁰, z_tx⁰]`.
    pub fn classify_on_tape(&self, tape: &mut Tape, z_t: Var, z_tx: Var, z_t0: Var, z_tx0: Var) -> Var {
        let input = tape.concat(&[z_t, z_tx, z_t0, z_tx0]);
        self.classifier.forward(tape, &self.store, input)
    }

    /// Logit of "permuted" from `[block, z_tx candidate, condition encoding]`.
    pub fn discriminate_on_tape(&self, tape: &mut Tape, side: Side, block: Var, candidate: Var, cond: Var) -> Var {
        let input = tape.concat(&[block, candidate, cond]);
        let net = match side {
            Side::X => &self.dis_x,
            Side::T => &self.dis_t,
        };
        net.forward(tape, &self.store, input)
    }

    // ---- batched inference --------------------------------------------

    pub fn prior_batch(&self, t_enc: &Array2<f64>, x_enc: &Array2<f64>) -> Result<BlockBatch> {
        check_width("treatment encoding", self.config.n_treatments(), t_enc.ncols())?;
        check_width("covariate encoding", self.config.n_covariates(), x_enc.ncols())?;
        check_width("prior batch rows", t_enc.nrows(), x_enc.nrows())?;
        let d = self.config.dims;
        let kx = self.embed_x.eval(&self.store, x_enc);
        let kt = self.embed_t.eval(&self.store, t_enc);
        let (x_mean, x_log_scale) = split_array(self.prior_x.eval(&self.store, x_enc), d.n_x);
        let (t_mean, t_log_scale) = split_array(self.prior_t.eval(&self.store, t_enc), d.n_t);
        let (tx_mean, tx_log_scale) = split_array(self.prior_tx.eval(&self.store, &(kx * kt)), d.n_tx);
        Ok(BlockBatch {
            x_mean,
            x_log_scale,
            tx_mean,
            tx_log_scale,
            t_mean,
            t_log_scale,
        })
    }

    pub fn posterior_batch(&self, y: &Array2<f64>, t_enc: &Array2<f64>, x_enc: &Array2<f64>) -> Result<BlockBatch> {
        check_width("outcome width", self.config.n_genes, y.ncols())?;
        check_width("treatment encoding", self.config.n_treatments(), t_enc.ncols())?;
        check_width("covariate encoding", self.config.n_covariates(), x_enc.ncols())?;
        check_width("posterior batch rows", y.nrows(), t_enc.nrows())?;
        check_width("posterior batch rows", y.nrows(), x_enc.nrows())?;
        let d = self.config.dims;
        let cat = |parts: &[&Array2<f64>]| {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(ndarray::Axis(1), &views).expect("rows agree")
        };
        let normalized;
        let y = match &self.config.scaling {
            Some(sc) => {
                normalized = (y - &sc.shift_row()) / &sc.scale_row();
                &normalized
            }
            None => y,
        };
        let (x_mean, x_log_scale) = split_array(self.enc_x.eval(&self.store, &cat(&[y, x_enc])), d.n_x);
        let (t_mean, t_log_scale) = split_array(self.enc_t.eval(&self.store, &cat(&[y, t_enc])), d.n_t);
        let (tx_mean, tx_log_scale) =
            split_array(self.enc_tx.eval(&self.store, &cat(&[y, t_enc, x_enc])), d.n_tx);
        Ok(BlockBatch {
            x_mean,
            x_log_scale,
            tx_mean,
            tx_log_scale,
            t_mean,
            t_log_scale,
        })
    }

    /// Posterior blocks for dataset rows, using the dataset's own labels.
    pub fn encode_rows(&self, ds: &Dataset, rows: &[usize]) -> Result<BlockBatch> {
        self.config.check_dataset(ds)?;
        let y = ds.outcomes.select(ndarray::Axis(0), rows);
        let t: Vec<usize> = rows.iter().map(|&r| ds.treatments.codes[r]).collect();
        let x: Vec<usize> = rows.iter().map(|&r| ds.covariates.codes[r]).collect();
        self.posterior_batch(
            &y,
            &one_hot(&t, self.config.n_treatments()),
            &one_hot(&x, self.config.n_covariates()),
        )
    }

    pub fn decode_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("latent width", self.config.dims.total(), z.ncols())?;
        let out = self.decoder.eval(&self.store, z);
        Ok(match &self.config.scaling {
            Some(sc) => out * &sc.scale_row() + &sc.shift_row(),
            None => out,
        })
    }

    // ---- single-cell operations ---------------------------------------

    pub fn prior_params(&self, t_enc: &[f64], x_enc: &[f64]) -> Result<PriorTriple> {
        let b = self.prior_batch(&row(t_enc), &row(x_enc))?;
        Ok(BlockTriple {
            x: row_gaussian(&b.x_mean, &b.x_log_scale),
            tx: row_gaussian(&b.tx_mean, &b.tx_log_scale),
            t: row_gaussian(&b.t_mean, &b.t_log_scale),
        })
    }

    /// Interaction prior evaluated directly on an embedding product `k_x ⊙ k_t`.
    pub fn interaction_prior_from_embedding(&self, h: &[f64]) -> Result<DiagGaussian> {
        check_width("embedding width", self.config.arch.embed_width, h.len())?;
        let (m, ls) = split_array(self.prior_tx.eval(&self.store, &row(h)), self.config.dims.n_tx);
        Ok(row_gaussian(&m, &ls))
    }

    pub fn covariate_embedding(&self, x_enc: &[f64]) -> Result<Vec<f64>> {
        check_width("covariate encoding", self.config.n_covariates(), x_enc.len())?;
        Ok(self.embed_x.eval(&self.store, &row(x_enc)).row(0).to_vec())
    }

    pub fn treatment_embedding(&self, t_enc: &[f64]) -> Result<Vec<f64>> {
        check_width("treatment encoding", self.config.n_treatments(), t_enc.len())?;
        Ok(self.embed_t.eval(&self.store, &row(t_enc)).row(0).to_vec())
    }

    pub fn posterior_params(&self, y: &[f64], t_enc: &[f64], x_enc: &[f64]) -> Result<PosteriorTriple> {
        let b = self.posterior_batch(&row(y), &row(t_enc), &row(x_enc))?;
        Ok(BlockTriple {
            x: row_gaussian(&b.x_mean, &b.x_log_scale),
            tx: row_gaussian(&b.tx_mean, &b.tx_log_scale),
            t: row_gaussian(&b.t_mean, &b.t_log_scale),
        })
    }

    pub fn decode(&self, z: &LatentSample) -> Result<Vec<f64>> {
        z.check(&self.config.dims)?;
        Ok(self.decode_batch(&row(&z.stacked()))?.row(0).to_vec())
    }

    /// Treatment probabilities from a treated and a control representation.
    pub fn classify_treatment(&self, z_t: &[f64], z_tx: &[f64], z_t0: &[f64], z_tx0: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.dims;
        check_width("z_t", d.n_t, z_t.len())?;
        check_width("z_tx", d.n_tx, z_tx.len())?;
        check_width("z_t0", d.n_t, z_t0.len())?;
        check_width("z_tx0", d.n_tx, z_tx0.len())?;
        let input: Vec<f64> = [z_t, z_tx, z_t0, z_tx0].concat();
        let logits = self.classifier.eval(&self.store, &row(&input));
        Ok(softmax(logits.row(0).as_slice().expect("contiguous")))
    }

    /// Probability that `candidate` is a within-condition permuted copy.
    pub fn discriminate_permutation(&self, side: Side, block: &[f64], candidate: &[f64], cond: &[f64]) -> Result<f64> {
        let d = self.config.dims;
        let (net, block_w, cond_w) = match side {
            Side::X => (&self.dis_x, d.n_x, self.config.n_covariates()),
            Side::T => (&self.dis_t, d.n_t, self.config.n_treatments()),
        };
        check_width("discriminator block", block_w, block.len())?;
        check_width("z_tx candidate", d.n_tx, candidate.len())?;
        check_width("condition encoding", cond_w, cond.len())?;
        let input: Vec<f64> = [block, candidate, cond].concat();
        Ok(sigmoid(net.eval(&self.store, &row(&input))[[0, 0]]))
    }

    /// Mutable access for tests and checkpoint loading.
    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn classifier_output_layer(&self) -> (ParamId, ParamId) {
        let ids: Vec<ParamId> = self.classifier.param_ids().collect();
        (ids[ids.len() - 2], ids[ids.len() - 1])
    }

    pub fn embed_x_output_layer(&self) -> (ParamId, ParamId) {
        let ids: Vec<ParamId> = self.embed_x.param_ids().collect();
        (ids[ids.len() - 2], ids[ids.len() - 1])
    }
}

/// Within-group derangement of row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPermutation {
    /// `source[i]` is the row whose candidate is paired with row `i`.
    pub source: Vec<usize>,
    /// True where `source[i] != i`.
    pub permuted: Vec<bool>,
    /// Groups of size one, left in place.
    pub skipped_groups: usize,
}

/// Shuffles rows within each condition group with Sattolo's algorithm, so
/// every row of a group of size two or more receives another member's value.
pub fn permute_within_condition<R: Rng + ?Sized>(conditions: &[usize], rng: &mut R) -> GroupPermutation {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in conditions.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut source: Vec<usize> = (0..conditions.len()).collect();
    let mut permuted = vec![false; conditions.len()];
    let mut skipped_groups = 0;
    for members in groups.values() {
        if members.len() < 2 {
            skipped_groups += 1;
            continue;
        }
        let mut cycle = members.clone();
        for i in (1..cycle.len()).rev() {
            let j = rng.random_range(0..i);
            cycle.swap(i, j);
        }
        for (&row, &src) in members.iter().zip(&cycle) {
            source[row] = src;
            permuted[row] = true;
        }
    }
    GroupPermutation {
        source,
        permuted,
        skipped_groups,
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
