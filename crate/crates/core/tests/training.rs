use std::collections::BTreeSet;

use fcr::model::{Architecture, BlockVars, GaussVars};
use fcr::nn::{Adam, Tape};
use fcr::simgen::{generate_synthetic, SimConfig};
use fcr::train::checkpoint::{decode_checkpoint, encode_checkpoint};
use fcr::train::losses::{
    build_discriminator_objective, discriminator_pairs, evaluate_objective, negative_elbo_terms,
    permutation_bce_term, similarity_term, treatment_ce_term,
};
use fcr::train::{
    grid_search, load_checkpoint, load_checkpoint_expecting, save_checkpoint, split_dataset, total_loss, train,
    ControlPool, Grid, GridAxis, LossParts, LossWeights, SplitConfig, TrainConfig,
};
use fcr::{Dataset, FcrError, FcrModel, LatentDims, Labels, ModelConfig};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn labelled(n: usize, n_controls: usize) -> Dataset {
    let t: Vec<String> = (0..n)
        .map(|i| if i < n_controls { "ctrl".into() } else { format!("d{}", i % 2) })
        .collect();
    let x: Vec<String> = (0..n).map(|i| format!("c{}", i % 3)).collect();
    let treatments = Labels::from_strings(&t);
    let control = treatments.level_of("ctrl");
    Dataset::new(Array2::zeros((n, 2)), Labels::from_strings(&x), treatments, control).unwrap()
}

fn small_problem() -> (Dataset, ModelConfig, TrainConfig) {
    let ds = generate_synthetic(&SimConfig {
        sample_count: 400,
        y_dim: 10,
        standardize: true,
        ..SimConfig::default()
    })
    .unwrap();
    let mc = ModelConfig::for_dataset(
        &ds,
        LatentDims::new(1, 2, 1).unwrap(),
        Architecture {
            hidden: 16,
            depth: 1,
            embed_width: 8,
            slope: 0.2,
        },
        3,
    );
    let tc = TrainConfig {
        epochs: 8,
        batch_size: 64,
        lr: 3e-3,
        disc_lr: 3e-3,
        disc_steps: 1,
        ..TrainConfig::default()
    };
    (ds, mc, tc)
}

#[test]
fn split_counts_follow_the_floor_rule() {
    let ds = labelled(1000, 100);
    let s = split_dataset(&ds, &SplitConfig::default(), 0).unwrap();
    assert_eq!(s.prediction.len(), 20);
    assert_eq!(s.test.len(), 196);
    assert_eq!(s.train.len() + s.validation.len(), 784);
    assert!(s.train.len() == 627 || s.train.len() == 628);
    assert!(s.prediction.iter().all(|&r| ds.control_mask[r]));
}

#[test]
fn split_with_only_controls() {
    let ds = labelled(50, 50);
    let s = split_dataset(&ds, &SplitConfig::default(), 1).unwrap();
    assert_eq!(s.prediction.len(), 10);
    assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 40);
}

#[test]
fn split_needs_controls() {
    let ds = labelled(50, 0);
    assert!(matches!(
        split_dataset(&ds, &SplitConfig::default(), 1),
        Err(FcrError::Protocol(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_and_repeat(n in 1usize..400, frac in 0.0f64..1.0, seed in 0u64..50) {
        let n_controls = ((n as f64 * frac).ceil() as usize).max(1).min(n);
        let ds = labelled(n, n_controls);
        let a = split_dataset(&ds, &SplitConfig::default(), seed).unwrap();
        let b = split_dataset(&ds, &SplitConfig::default(), seed).unwrap();
        prop_assert_eq!(&a, &b);
        let all: Vec<usize> = [&a.train, &a.validation, &a.test, &a.prediction]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        let set: BTreeSet<usize> = all.iter().copied().collect();
        prop_assert_eq!(set.len(), all.len());
        prop_assert_eq!(set, (0..n).collect::<BTreeSet<_>>());
    }

    #[test]
    fn kl_parts_nonnegative_on_random_gaussians(
        vals in prop::collection::vec(-2.0f64..2.0, 24),
    ) {
        let m = |o: usize| Array2::from_shape_vec((3, 2), vals[o..o + 6].to_vec()).unwrap();
        let mut tape = Tape::new();
        let q = GaussVars { mean: tape.constant(m(0)), log_scale: tape.constant(m(6)) };
        let p = GaussVars { mean: tape.constant(m(12)), log_scale: tape.constant(m(18)) };
        let y = tape.constant(Array2::zeros((3, 4)));
        let post = BlockVars { x: q, tx: q, t: q };
        let prior = BlockVars { x: p, tx: p, t: p };
        let e = negative_elbo_terms(&mut tape, y, y, &post, &prior);
        prop_assert!(tape.scalar(e.kl_x) >= -1e-12);
    }
}

#[test]
fn elbo_reduces_to_constant_at_prior_and_perfect_decoder() {
    let mut tape = Tape::new();
    let y = tape.constant(array![[1.0, 2.0, -0.5, 0.0]]);
    let g = GaussVars {
        mean: tape.constant(array![[0.3, -1.0]]),
        log_scale: tape.constant(array![[0.2, -0.4]]),
    };
    let post = BlockVars { x: g, tx: g, t: g };
    let e = negative_elbo_terms(&mut tape, y, y, &post, &post);
    for kl in [e.kl_x, e.kl_tx, e.kl_t] {
        assert_eq!(tape.scalar(kl), 0.0);
    }
    let constant = 0.5 * 4.0 * (2.0 * std::f64::consts::PI).ln();
    assert!((tape.scalar(e.recon) - constant).abs() < 1e-12);
}

#[test]
fn similarity_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(array![[1.0, 0.0], [0.5, 2.0]]);
    let (same, deg) = similarity_term(&mut tape, a, a, a, a);
    assert_eq!(deg, 0);
    assert!(tape.scalar(same).abs() < 1e-12);
    let zt = tape.constant(array![[1.0, 0.0]]);
    let zt0 = tape.constant(array![[0.0, 3.0]]);
    let zx = tape.constant(array![[2.0, 1.0]]);
    let (orth, _) = similarity_term(&mut tape, zt, zt0, zx, zx);
    assert!((tape.scalar(orth) + 1.0).abs() < 1e-12);
}

#[test]
fn treatment_cross_entropy_examples() {
    let mut tape = Tape::new();
    let uniform = tape.constant(Array2::zeros((3, 5)));
    let ce = treatment_ce_term(&mut tape, uniform, &[0, 2, 4]);
    assert!((tape.scalar(ce) - 5f64.ln()).abs() < 1e-12);
    let sharp = tape.constant(array![[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]]);
    let ce = treatment_ce_term(&mut tape, sharp, &[0, 2]);
    assert!(tape.scalar(ce) >= 0.0 && tape.scalar(ce) < 1e-20);
}

#[test]
fn permutation_bce_examples() {
    let mut tape = Tape::new();
    let flags = [true, false, true, false];
    let half = tape.constant(Array2::zeros((4, 1)));
    let l = permutation_bce_term(&mut tape, half, &flags);
    assert!((tape.scalar(l) - 2f64.ln()).abs() < 1e-12);
    let perfect = tape.constant(array![[40.0], [-40.0], [40.0], [-40.0]]);
    let l = permutation_bce_term(&mut tape, perfect, &flags);
    assert!(tape.scalar(l) < 1e-15);
}

#[test]
fn discriminator_flags_are_balanced() {
    let conds = [0, 0, 0, 1, 1, 2, 3, 3, 3, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = discriminator_pairs(&conds, &mut rng);
    let permuted = p.flags.iter().filter(|f| **f).count();
    let plain = p.flags.len() - permuted;
    // Only the singleton group lacks a permuted copy.
    assert_eq!(plain, 10);
    assert_eq!(permuted, 9);
    assert_eq!(p.skipped_groups, 1);
    for ((b, c), f) in p.block_rows.iter().zip(&p.candidate_rows).zip(&p.flags) {
        assert_eq!(conds[*b], conds[*c]);
        assert_eq!(*f, b != c);
    }
}

#[test]
fn total_loss_examples() {
    let parts = LossParts {
        neg_elbo: 3.0,
        sim: 0.5,
        ct: 1.2,
        dis_x: 0.7,
        dis_t: 0.6,
        ..LossParts::default()
    };
    let zero = LossWeights { sim: 0.0, ct: 0.0, dis: 0.0 };
    assert_eq!(total_loss(&parts, &zero).unwrap(), 3.0);
    assert_eq!(total_loss(&LossParts::default(), &LossWeights::default()).unwrap(), 0.0);
    let one = LossWeights { sim: 1.0, ct: 0.0, dis: 0.0 };
    let two = LossWeights { sim: 2.0, ..one };
    let c1 = total_loss(&parts, &one).unwrap() - 3.0;
    let c2 = total_loss(&parts, &two).unwrap() - 3.0;
    assert!((c2 - 2.0 * c1).abs() < 1e-12);
    let w = LossWeights::default();
    assert!((total_loss(&parts, &w).unwrap() - (3.0 + 0.5 + 1.2 - 1.3)).abs() < 1e-12);
    let bad = LossParts { sim: f64::NAN, ..parts };
    assert!(matches!(total_loss(&bad, &w), Err(FcrError::NonFinite { .. })));
}

#[test]
fn train_config_validation() {
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { lr: -1.0, ..TrainConfig::default() },
        TrainConfig { weights: LossWeights { sim: -0.1, ct: 1.0, dis: 1.0 }, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(FcrError::Config(_))));
    }
}

#[test]
fn training_lowers_validation_elbo_and_is_reproducible() {
    let (ds, mc, tc) = small_problem();
    let a = train(&ds, &mc, &tc).unwrap();
    let b = train(&ds, &mc, &tc).unwrap();
    assert!(!a.diverged());
    assert_eq!(a.model.store, b.model.store);

    let pool = ControlPool::new(&ds, &a.splits.train);
    let eval = |m: &FcrModel| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        evaluate_objective(m, &ds, &a.splits.validation, &pool, &tc.weights, &mut rng).unwrap().neg_elbo
    };
    let before = eval(&FcrModel::new(mc.clone()).unwrap());
    let after = eval(&a.model);
    assert!(after < before, "validation -ELBO {before} -> {after}");
}

#[test]
fn zero_weights_reduce_to_a_conditional_vae() {
    let (ds, mc, tc) = small_problem();
    let plain = TrainConfig {
        weights: LossWeights { sim: 0.0, ct: 0.0, dis: 0.0 },
        ..tc
    };
    let out = train(&ds, &mc, &plain).unwrap();
    assert!(!out.diverged());
    for s in &out.history.steps {
        assert!((s.parts.total - s.parts.neg_elbo).abs() <= 1e-9 * s.parts.total.abs().max(1.0));
    }
}

#[test]
fn discriminator_step_does_not_raise_its_loss() {
    let (ds, mc, _) = small_problem();
    let mut model = FcrModel::new(mc).unwrap();
    let rows: Vec<usize> = (0..64).collect();
    let post = model.encode_rows(&ds, &rows).unwrap();
    let t: Vec<usize> = rows.iter().map(|&r| ds.treatments.codes[r]).collect();
    let x: Vec<usize> = rows.iter().map(|&r| ds.covariates.codes[r]).collect();
    // The same seed reproduces the latent draws and permutations.
    let record = |m: &FcrModel, tape: &mut Tape| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        build_discriminator_objective(tape, m, &post, &t, &x, &mut rng).0
    };
    let mut opt = Adam::new(&model.store, model.discriminator_param_ids(), 1e-5);
    for _ in 0..5 {
        let mut tape = Tape::new();
        let l = record(&model, &mut tape);
        let before = tape.scalar(l);
        opt.step(&mut model.store, tape.backward(l).params());
        let mut after_tape = Tape::new();
        let al = record(&model, &mut after_tape);
        let after = after_tape.scalar(al);
        assert!(after <= before + 1e-12, "{before} -> {after}");
    }
}

#[test]
fn checkpoint_round_trip_and_failures() {
    let (ds, mc, tc) = small_problem();
    let model = train(&ds, &mc, &TrainConfig { epochs: 1, ..tc }).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fcrc");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let z = Array2::from_shape_fn((5, mc.dims.total()), |(i, j)| (i as f64 - j as f64) * 0.3);
    assert_eq!(model.decode_batch(&z).unwrap(), loaded.decode_batch(&z).unwrap());
    assert_eq!(loaded.store, model.store);

    let bytes = encode_checkpoint(&model);
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(
            decode_checkpoint(&bytes[..cut], &path),
            Err(FcrError::Format { .. })
        ));
    }
    let mut other = mc.clone();
    other.init_seed += 1;
    assert!(load_checkpoint_expecting(&path, &other).is_err());
    assert!(load_checkpoint_expecting(&path, &mc).is_ok());
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.fcrc")),
        Err(FcrError::Io { .. })
    ));
}

#[test]
fn corrupted_config_block_is_refused() {
    let (_, mc, _) = small_problem();
    let model = FcrModel::new(mc).unwrap();
    let mut bytes = encode_checkpoint(&model);
    // Flip a byte inside the embedded configuration JSON.
    let pos = bytes.windows(7).position(|w| w == b"\"dims\":").unwrap();
    bytes[pos + 1] = b'D';
    assert!(decode_checkpoint(&bytes, std::path::Path::new("x")).is_err());
}

#[test]
fn grid_search_paths() {
    assert_eq!(Grid::standard().len(), 11 * 11 * 10);
    let (ds, mc, tc) = small_problem();
    let tc = TrainConfig { epochs: 2, ..tc };

    let single = Grid { axes: vec![GridAxis { key: "w_sim".into(), values: vec![1.0] }] };
    let report = grid_search(&ds, &mc, &tc, &single, None).unwrap();
    assert_eq!(report.ranked.len(), 1);
    let plain = train(&ds, &mc, &tc).unwrap();
    assert_eq!(Some(report.ranked[0].best_val_total), plain.history.best_val_total);

    let two = Grid { axes: vec![GridAxis { key: "lr".into(), values: vec![3e-3, 1e3] }] };
    let dir = tempfile::tempdir().unwrap();
    let tc_long = TrainConfig { epochs: 6, ..tc };
    let first = grid_search(&ds, &mc, &tc_long, &two, Some(dir.path())).unwrap();
    assert_eq!(first.ranked.len(), 1);
    assert_eq!(first.failures.len(), 1);
    assert_eq!(first.failures[0].overrides, vec![("lr".to_string(), 1e3)]);
    assert_eq!(first.cache_hits, 0);
    let second = grid_search(&ds, &mc, &tc_long, &two, Some(dir.path())).unwrap();
    assert_eq!(second.cache_hits, 2);
    assert_eq!(second.ranked, first.ranked);
    assert_eq!(second.failures, first.failures);
}
