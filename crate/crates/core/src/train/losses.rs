//! Objective terms built on the autodiff tape.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::math::PROB_FLOOR;
use crate::model::{one_hot, permute_within_condition, BlockVars, FcrModel, GaussVars, Side};
use crate::nn::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sim: f64,
    pub ct: f64,
    pub dis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            sim: 1.0,
            ct: 1.0,
            dis: 1.0,
        }
    }
}

/// Scalar values of every term of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub neg_elbo: f64,
    pub recon: f64,
    pub kl_x: f64,
    pub kl_tx: f64,
    pub kl_t: f64,
    pub sim: f64,
    pub ct: f64,
    pub dis_x: f64,
    pub dis_t: f64,
    pub paired: usize,
    pub skipped_pairs: usize,
    pub degenerate_cosines: usize,
}

impl LossParts {
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("total", self.total),
            ("recon", self.recon),
            ("kl_x", self.kl_x),
            ("kl_tx", self.kl_tx),
            ("kl_t", self.kl_t),
            ("sim", self.sim),
            ("ct", self.ct),
            ("dis_x", self.dis_x),
            ("dis_t", self.dis_t),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// `−ELBO + ω₁·L_sim + ω₂·L_ct − ω₃·(L_dis_x + L_dis_t)`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    let vals = [
        parts.neg_elbo,
        parts.sim,
        parts.ct,
        parts.dis_x,
        parts.dis_t,
        w.sim,
        w.ct,
        w.dis,
    ];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(FcrError::NonFinite {
            part: "loss components".into(),
        });
    }
    Ok(parts.neg_elbo + w.sim * parts.sim + w.ct * parts.ct - w.dis * (parts.dis_x + parts.dis_t))
}

/// Rows of a dataset gathered for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub y: Array2<f64>,
    pub t: Vec<usize>,
    pub x: Vec<usize>,
}

impl Batch {
    pub fn from_rows(ds: &Dataset, rows: &[usize]) -> Self {
        Batch {
            y: ds.outcomes.select(ndarray::Axis(0), rows),
            t: rows.iter().map(|&r| ds.treatments.codes[r]).collect(),
            x: rows.iter().map(|&r| ds.covariates.codes[r]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// KL(q‖p) per datum, averaged over rows.
pub fn kl_term(tape: &mut Tape, q: GaussVars, p: GaussVars) -> Var {
    let d = tape.sub(q.log_scale, p.log_scale);
    let ratio = {
        let two = tape.scale(d, 2.0);
        tape.exp(two)
    };
    let diff = tape.sub(q.mean, p.mean);
    let diff2 = tape.square(diff);
    let inv_var_p = {
        let m2 = tape.scale(p.log_scale, -2.0);
        tape.exp(m2)
    };
    let quad = tape.mul(diff2, inv_var_p);
    let inner = tape.add(ratio, quad);
    let half = tape.scale(inner, 0.5);
    let neg_d = tape.scale(d, -1.0);
    let kl = tape.add(neg_d, half);
    let kl = tape.add_scalar(kl, -0.5);
    let per_row = tape.sum_cols(kl);
    tape.mean(per_row)
}

pub struct ElboVars {
    pub total: Var,
    pub recon: Var,
    pub kl_x: Var,
    pub kl_tx: Var,
    pub kl_t: Var,
}

/// Unit-variance Gaussian reconstruction term plus the three block KLs.
pub fn negative_elbo_terms(tape: &mut Tape, y: Var, y_hat: Var, post: &BlockVars, prior: &BlockVars) -> ElboVars {
    let k = tape.value(y).ncols() as f64;
    let r = tape.sub(y, y_hat);
    let r2 = tape.square(r);
    let per_row = tape.sum_cols(r2);
    let half = tape.scale(per_row, 0.5);
    let nll = tape.add_scalar(half, 0.5 * k * (2.0 * std::f64::consts::PI).ln());
    let recon = tape.mean(nll);
    let kl_x = kl_term(tape, post.x, prior.x);
    let kl_tx = kl_term(tape, post.tx, prior.tx);
    let kl_t = kl_term(tape, post.t, prior.t);
    let a = tape.add(recon, kl_x);
    let b = tape.add(a, kl_tx);
    let total = tape.add(b, kl_t);
    ElboVars {
        total,
        recon,
        kl_x,
        kl_tx,
        kl_t,
    }
}

/// `mean(cos(z_t, z_t⁰) − cos(z_x, z_x⁰))` and the count of zero-norm rows.
pub fn similarity_term(tape: &mut Tape, z_t: Var, z_t0: Var, z_x: Var, z_x0: Var) -> (Var, usize) {
    let (ct, dt) = tape.cosine_rows(z_t, z_t0);
    let (cx, dx) = tape.cosine_rows(z_x, z_x0);
    let diff = tape.sub(ct, cx);
    (tape.mean(diff), dt + dx)
}

/// Mean cross-entropy of treatment logits against labels.
pub fn treatment_ce_term(tape: &mut Tape, logits: Var, labels: &[usize]) -> Var {
    let ls = tape.log_softmax(logits);
    let ls = tape.clamp(ls, PROB_FLOOR.ln(), 0.0);
    let picked = tape.pick(ls, labels);
    let m = tape.mean(picked);
    tape.scale(m, -1.0)
}

/// Binary cross-entropy of "permuted" logits against flags.
pub fn permutation_bce_term(tape: &mut Tape, logits: Var, flags: &[bool]) -> Var {
    let pos = tape.log_sigmoid(logits);
    let pos = tape.clamp(pos, PROB_FLOOR.ln(), 0.0);
    let flipped = tape.scale(logits, -1.0);
    let neg = tape.log_sigmoid(flipped);
    let neg = tape.clamp(neg, PROB_FLOOR.ln(), 0.0);
    let f = Array2::from_shape_fn((flags.len(), 1), |(i, _)| if flags[i] { 1.0 } else { 0.0 });
    let fc = tape.constant(f.mapv(|v| 1.0 - v));
    let fv = tape.constant(f);
    let a = tape.mul(pos, fv);
    let b = tape.mul(neg, fc);
    let ll = tape.add(a, b);
    let m = tape.mean(ll);
    tape.scale(m, -1.0)
}

/// Discriminator input set: every row once unpermuted (flag false) and,
/// for rows in groups of two or more, once with a within-group partner's
/// `z_tx` (flag true).
pub struct DiscriminatorPairs {
    pub block_rows: Vec<usize>,
    pub candidate_rows: Vec<usize>,
    pub flags: Vec<bool>,
    pub skipped_groups: usize,
}

pub fn discriminator_pairs<R: Rng + ?Sized>(conditions: &[usize], rng: &mut R) -> DiscriminatorPairs {
    let perm = permute_within_condition(conditions, rng);
    let n = conditions.len();
    let mut block_rows: Vec<usize> = (0..n).collect();
    let mut candidate_rows: Vec<usize> = (0..n).collect();
    let mut flags = vec![false; n];
    for i in 0..n {
        if perm.permuted[i] {
            block_rows.push(i);
            candidate_rows.push(perm.source[i]);
            flags.push(true);
        }
    }
    DiscriminatorPairs {
        block_rows,
        candidate_rows,
        flags,
        skipped_groups: perm.skipped_groups,
    }
}

/// BCE of one discriminator on tape, given latent blocks of the batch.
pub fn discriminator_term<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &FcrModel,
    side: Side,
    block: Var,
    z_tx: Var,
    conditions: &[usize],
    n_levels: usize,
    rng: &mut R,
) -> Var {
    let pairs = discriminator_pairs(conditions, rng);
    let b = tape.gather(block, &pairs.block_rows);
    let c = tape.gather(z_tx, &pairs.candidate_rows);
    let cond_codes: Vec<usize> = pairs.block_rows.iter().map(|&r| conditions[r]).collect();
    let cond = tape.constant(one_hot(&cond_codes, n_levels));
    let logits = model.discriminate_on_tape(tape, side, b, c, cond);
    permutation_bce_term(tape, logits, &pairs.flags)
}

/// Training-set controls indexed by covariate level.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPool {
    by_covariate: Vec<Vec<usize>>,
}

impl ControlPool {
    /// Controls among `rows` of `ds`.
    pub fn new(ds: &Dataset, rows: &[usize]) -> Self {
        let mut by_covariate = vec![Vec::new(); ds.covariates.n_levels()];
        for &r in rows {
            if ds.control_mask[r] {
                by_covariate[ds.covariates.codes[r]].push(r);
            }
        }
        ControlPool { by_covariate }
    }

    pub fn candidates(&self, covariate: usize) -> &[usize] {
        self.by_covariate.get(covariate).map_or(&[], |v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.by_covariate.iter().all(|v| v.is_empty())
    }
}

/// Sampled latent blocks of a batch on tape.
pub struct SampledBlocks {
    pub z_x: Var,
    pub z_tx: Var,
    pub z_t: Var,
}

fn sample_block<R: Rng + ?Sized>(tape: &mut Tape, g: GaussVars, rng: &mut R) -> Var {
    let shape = tape.value(g.mean).raw_dim();
    let eps = Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal));
    let e = tape.constant(eps);
    let s = tape.exp(g.log_scale);
    let noise = tape.mul(s, e);
    tape.add(g.mean, noise)
}

pub fn sample_blocks<R: Rng + ?Sized>(tape: &mut Tape, post: &BlockVars, rng: &mut R) -> SampledBlocks {
    SampledBlocks {
        z_x: sample_block(tape, post.x, rng),
        z_tx: sample_block(tape, post.tx, rng),
        z_t: sample_block(tape, post.t, rng),
    }
}

/// The full minimized objective for one batch, recorded on `tape`.
pub struct Objective {
    pub total: Var,
    pub parts: LossParts,
    /// Each unweighted term as a tape variable, named as in [`LossParts`].
    pub terms: Vec<(&'static str, Var)>,
}

pub fn build_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &FcrModel,
    ds: &Dataset,
    rows: &[usize],
    pool: &ControlPool,
    w: &LossWeights,
    rng: &mut R,
) -> Result<Objective> {
    let cfg = &model.config;
    let (n_t, n_x) = (cfg.n_treatments(), cfg.n_covariates());
    let batch = Batch::from_rows(ds, rows);
    let y = tape.constant(batch.y.clone());
    let t_enc = tape.constant(one_hot(&batch.t, n_t));
    let x_enc = tape.constant(one_hot(&batch.x, n_x));
    let prior = model.prior_on_tape(tape, t_enc, x_enc);
    let post = model.posterior_on_tape(tape, y, t_enc, x_enc);
    let z = sample_blocks(tape, &post, rng);
    let stacked = tape.concat(&[z.z_x, z.z_tx, z.z_t]);
    let y_hat = model.decode_on_tape(tape, stacked);
    let elbo = negative_elbo_terms(tape, y, y_hat, &post, &prior);

    // Treated rows paired with a random training control of the same covariate.
    let mut treated = Vec::new();
    let mut controls = Vec::new();
    let mut skipped_pairs = 0;
    for (i, &r) in rows.iter().enumerate() {
        if ds.control_mask[r] {
            continue;
        }
        let cands = pool.candidates(batch.x[i]);
        if cands.is_empty() {
            skipped_pairs += 1;
            continue;
        }
        treated.push(i);
        controls.push(cands[rng.random_range(0..cands.len())]);
    }

    let mut degenerate = 0;
    let (sim, ct) = if treated.is_empty() {
        let zero = tape.constant(Array2::zeros((1, 1)));
        (zero, zero)
    } else {
        let cb = Batch::from_rows(ds, &controls);
        let control = cfg.control_level.ok_or_else(|| {
            FcrError::Protocol("controls were paired but no control level is configured".into())
        })?;
        let y0 = tape.constant(cb.y);
        let t0 = tape.constant(one_hot(&vec![control; cb.x.len()], n_t));
        let x0 = tape.constant(one_hot(&cb.x, n_x));
        let post0 = model.posterior_on_tape(tape, y0, t0, x0);
        let z0 = sample_blocks(tape, &post0, rng);
        let zt = tape.gather(z.z_t, &treated);
        let ztx = tape.gather(z.z_tx, &treated);
        let zx = tape.gather(z.z_x, &treated);
        let (sim, deg) = similarity_term(tape, zt, z0.z_t, zx, z0.z_x);
        degenerate = deg;
        let logits = model.classify_on_tape(tape, zt, ztx, z0.z_t, z0.z_tx);
        let labels: Vec<usize> = treated.iter().map(|&i| batch.t[i]).collect();
        (sim, treatment_ce_term(tape, logits, &labels))
    };

    let dis_x = discriminator_term(tape, model, Side::X, z.z_x, z.z_tx, &batch.x, n_x, rng);
    let dis_t = discriminator_term(tape, model, Side::T, z.z_t, z.z_tx, &batch.t, n_t, rng);

    let ws = tape.scale(sim, w.sim);
    let wc = tape.scale(ct, w.ct);
    let dsum = tape.add(dis_x, dis_t);
    let wd = tape.scale(dsum, -w.dis);
    let a = tape.add(elbo.total, ws);
    let b = tape.add(a, wc);
    let total = tape.add(b, wd);

    let parts = LossParts {
        total: tape.scalar(total),
        neg_elbo: tape.scalar(elbo.total),
        recon: tape.scalar(elbo.recon),
        kl_x: tape.scalar(elbo.kl_x),
        kl_tx: tape.scalar(elbo.kl_tx),
        kl_t: tape.scalar(elbo.kl_t),
        sim: tape.scalar(sim),
        ct: tape.scalar(ct),
        dis_x: tape.scalar(dis_x),
        dis_t: tape.scalar(dis_t),
        paired: treated.len(),
        skipped_pairs,
        degenerate_cosines: degenerate,
    };
    let terms = vec![
        ("recon", elbo.recon),
        ("kl_x", elbo.kl_x),
        ("kl_tx", elbo.kl_tx),
        ("kl_t", elbo.kl_t),
        ("sim", sim),
        ("ct", ct),
        ("dis_x", dis_x),
        ("dis_t", dis_t),
    ];
    Ok(Objective { total, parts, terms })
}

/// Objective values without gradients.
pub fn evaluate_objective<R: Rng + ?Sized>(
    model: &FcrModel,
    ds: &Dataset,
    rows: &[usize],
    pool: &ControlPool,
    w: &LossWeights,
    rng: &mut R,
) -> Result<LossParts> {
    if rows.is_empty() {
        return Err(FcrError::Precondition("cannot evaluate the objective on zero rows".into()));
    }
    let mut tape = Tape::new();
    Ok(build_objective(&mut tape, model, ds, rows, pool, w, rng)?.parts)
}

/// Discriminator loss `L_dis_x + L_dis_t` on detached latent samples, on tape.
pub fn build_discriminator_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &FcrModel,
    means: &crate::model::BlockBatch,
    t: &[usize],
    x: &[usize],
    rng: &mut R,
) -> (Var, f64, f64) {
    let cfg = &model.config;
    let mut draw = |m: &Array2<f64>, ls: &Array2<f64>| {
        let eps = Array2::from_shape_simple_fn(m.raw_dim(), || rng.sample::<f64, _>(StandardNormal));
        m + &(ls.mapv(f64::exp) * eps)
    };
    let zx = draw(&means.x_mean, &means.x_log_scale);
    let ztx = draw(&means.tx_mean, &means.tx_log_scale);
    let zt = draw(&means.t_mean, &means.t_log_scale);
    let zx = tape.constant(zx);
    let ztx = tape.constant(ztx);
    let zt = tape.constant(zt);
    let lx = discriminator_term(tape, model, Side::X, zx, ztx, x, cfg.n_covariates(), rng);
    let lt = discriminator_term(tape, model, Side::T, zt, ztx, t, cfg.n_treatments(), rng);
    let total = tape.add(lx, lt);
    let (vx, vt) = (tape.scalar(lx), tape.scalar(lt));
    (total, vx, vt)
}
