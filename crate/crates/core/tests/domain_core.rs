use approx::assert_abs_diff_eq;
use fcr::math::{
    cosine_similarity, cross_entropy, cross_entropy_grad, kl_diag_gaussian, kl_diag_gaussian_grad, reparameterize,
};
use fcr::{DiagGaussian, FcrError, LatentDims, LatentSample};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(len: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-3.0f64..3.0, len),
        prop::collection::vec(-1.5f64..1.5, len),
    )
        .prop_map(|(m, s)| DiagGaussian::new(m, s).unwrap())
}

fn pair() -> impl Strategy<Value = (DiagGaussian, DiagGaussian)> {
    (1usize..6).prop_flat_map(|n| (gaussian(n), gaussian(n)))
}

#[test]
fn kl_closed_forms() {
    let std1 = DiagGaussian::standard(1);
    assert_eq!(kl_diag_gaussian(&std1, &std1).unwrap(), 0.0);
    let shifted = DiagGaussian::from_scale(vec![1.0], &[1.0]).unwrap();
    assert_abs_diff_eq!(kl_diag_gaussian(&shifted, &std1).unwrap(), 0.5, epsilon = 1e-15);
    let wide = DiagGaussian::from_scale(vec![0.0], &[2.0]).unwrap();
    let expect = 0.5 * (4.0 - 1.0 - 4f64.ln());
    assert_abs_diff_eq!(kl_diag_gaussian(&wide, &std1).unwrap(), expect, epsilon = 1e-12);
}

#[test]
fn kl_rejects_bad_input() {
    let a = DiagGaussian::standard(2);
    let b = DiagGaussian::standard(3);
    assert!(matches!(kl_diag_gaussian(&a, &b), Err(FcrError::Dimension { .. })));
    assert!(matches!(
        DiagGaussian::from_scale(vec![0.0], &[0.0]),
        Err(FcrError::Domain(_))
    ));
}

#[test]
fn kl_matches_monte_carlo() {
    let q = DiagGaussian::from_scale(vec![0.3, -1.0], &[0.8, 1.5]).unwrap();
    let p = DiagGaussian::from_scale(vec![1.0, 0.0], &[1.2, 0.7]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mc: f64 = (0..n)
        .map(|_| {
            let z = q.sample(&mut rng);
            q.log_density(&z) - p.log_density(&z)
        })
        .sum::<f64>()
        / n as f64;
    let exact = kl_diag_gaussian(&q, &p).unwrap();
    assert!((mc - exact).abs() / exact <= 0.01, "mc {mc} exact {exact}");
}

#[test]
fn cosine_examples() {
    let a = [1.0, -2.0, 0.5];
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    assert_abs_diff_eq!(cosine_similarity(&a, &a).unwrap().value, 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(cosine_similarity(&a, &neg).unwrap().value, -1.0, epsilon = 1e-15);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
    let zero = cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    assert!(zero.degenerate);
    assert_eq!(zero.value, 0.0);
}

#[test]
fn reparameterize_examples() {
    let g = DiagGaussian::from_scale(vec![1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(reparameterize(&g, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    let out = reparameterize(&g, &[1.0, -1.0]).unwrap();
    assert_abs_diff_eq!(out[0], 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out[1], -2.0, epsilon = 1e-12);
    let e = [0.3, -0.7];
    assert_eq!(reparameterize(&DiagGaussian::standard(2), &e).unwrap(), e.to_vec());
    assert!(reparameterize(&g, &[1.0]).is_err());
}

#[test]
fn reparameterize_law_of_large_numbers() {
    let g = DiagGaussian::from_scale(vec![2.0, -1.0], &[0.5, 3.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            reparameterize(&g, &eps).unwrap()
        })
        .collect();
    let scale = g.scale();
    for k in 0..2 {
        let mean = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        // Relative to the scale, since a mean near zero has no useful relative error.
        assert!((mean - g.mean[k]).abs() / scale[k] <= 0.01);
        assert!((sd - scale[k]).abs() / scale[k] <= 0.01);
    }
}

#[test]
fn cross_entropy_examples() {
    assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
    assert_abs_diff_eq!(cross_entropy(&[0.25; 4], 2).unwrap(), 4f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], 1).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
    assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(FcrError::Index { .. })));
    assert!(cross_entropy(&[0.5, 0.6], 0).is_err());
}

#[test]
fn latent_sample_lengths() {
    let dims = LatentDims::new(1, 2, 1).unwrap();
    let ok = LatentSample {
        z_x: vec![0.0],
        z_tx: vec![0.0; 2],
        z_t: vec![0.0],
    };
    assert!(ok.check(&dims).is_ok());
    assert_eq!(ok.stacked().len(), 4);
    let bad = LatentSample { z_tx: vec![0.0], ..ok };
    assert!(bad.check(&dims).is_err());
    assert!(LatentDims::new(0, 0, 0).is_err());
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_nonnegative_and_zero_on_diagonal((q, p) in pair()) {
        prop_assert!(kl_diag_gaussian(&q, &p).unwrap() >= 0.0);
        prop_assert_eq!(kl_diag_gaussian(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_positive_when_parameters_differ((q, p) in pair()) {
        prop_assume!(q != p);
        prop_assert!(kl_diag_gaussian(&q, &p).unwrap() > 0.0);
    }

    #[test]
    fn kl_gradient_matches_central_differences((q, p) in pair()) {
        let g = kl_diag_gaussian_grad(&q, &p).unwrap();
        let h = 1e-5;
        let kl = |q: &DiagGaussian, p: &DiagGaussian| kl_diag_gaussian(q, p).unwrap();
        for i in 0..q.len() {
            let bump = |v: &mut Vec<f64>, d: f64| v[i] += d;
            let mut checks = Vec::new();
            for which in 0..4 {
                let (mut qp, mut qm, mut pp, mut pm) = (q.clone(), q.clone(), p.clone(), p.clone());
                match which {
                    0 => { bump(&mut qp.mean, h); bump(&mut qm.mean, -h); }
                    1 => { bump(&mut qp.log_scale, h); bump(&mut qm.log_scale, -h); }
                    2 => { bump(&mut pp.mean, h); bump(&mut pm.mean, -h); }
                    _ => { bump(&mut pp.log_scale, h); bump(&mut pm.log_scale, -h); }
                }
                let num = if which < 2 {
                    (kl(&qp, &p) - kl(&qm, &p)) / (2.0 * h)
                } else {
                    (kl(&q, &pp) - kl(&q, &pm)) / (2.0 * h)
                };
                checks.push(num);
            }
            let analytic = [g.q_mean[i], g.q_log_scale[i], g.p_mean[i], g.p_log_scale[i]];
            for (a, n) in analytic.iter().zip(&checks) {
                // Near zero both sides are dominated by rounding, so use an absolute floor.
                prop_assert!(rel_err(*a, *n) <= 1e-4 || (a - n).abs() <= 1e-7, "analytic {} numeric {}", a, n);
            }
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences(
        raw in prop::collection::vec(0.05f64..1.0, 2..6),
        pick in 0usize..6,
    ) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let label = pick % probs.len();
        let g = cross_entropy_grad(&probs, label).unwrap();
        let h = 1e-5;
        let f = |p: f64| -p.ln();
        let num = (f(probs[label] + h) - f(probs[label] - h)) / (2.0 * h);
        prop_assert!(rel_err(g[label], num) <= 1e-4);
        for (k, v) in g.iter().enumerate() {
            if k != label {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn cosine_scale_invariant_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        alpha in 0.01f64..100.0,
        beta in 0.01f64..100.0,
    ) {
        let base = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&base.value));
        let sa: Vec<f64> = a.iter().map(|v| v * alpha).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * beta).collect();
        let scaled = cosine_similarity(&sa, &sb).unwrap();
        prop_assert!((base.value - scaled.value).abs() <= 1e-12);
    }

    #[test]
    fn block_ranges_partition(n_x in 0usize..5, n_tx in 0usize..5, n_t in 0usize..5) {
        prop_assume!(n_x + n_tx + n_t > 0);
        let d = LatentDims::new(n_x, n_tx, n_t).unwrap();
        let mut all: Vec<usize> = d.x_range().chain(d.tx_range()).chain(d.t_range()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..d.total()).collect::<Vec<_>>());
    }
}
