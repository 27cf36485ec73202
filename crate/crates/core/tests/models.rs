use bof_core::baseline::mean_feature;
use bof_core::bof_model::{
    fit_gmm, fit_gmm_traced, kl_marginal, kl_mc, loglik, sample, FitOptions,
};
use bof_core::{DistanceConfig, FeatureSequence, GmmModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_frames(n: usize, mean: &[f64], sd: f64, seed: u64) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n)
        .flat_map(|_| mean.to_vec())
        .map(|m| m + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    FeatureSequence::new(data, mean.len(), "g").unwrap()
}

fn concat(a: &FeatureSequence, b: &FeatureSequence) -> FeatureSequence {
    let mut data = a.as_slice().to_vec();
    data.extend_from_slice(b.as_slice());
    FeatureSequence::new(data, a.dim(), "ab").unwrap()
}

/// Direct evaluation of `ln Σ_k π_k N(x; μ_k, σ²_k)` without log-sum-exp.
fn naive_log_density(model: &GmmModel, x: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..model.components() {
        let mut p = model.weights()[k];
        for ((xi, m), v) in x.iter().zip(model.mean(k)).zip(model.variance(k)) {
            p *= (-(xi - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        total += p;
    }
    total.ln()
}

/// Symmetrized KL between single diagonal Gaussians.
fn closed_form_kl(m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]) -> f64 {
    let one = |ma: &[f64], va: &[f64], mb: &[f64], vb: &[f64]| -> f64 {
        (0..ma.len())
            .map(|j| {
                0.5 * (va[j] / vb[j] + (mb[j] - ma[j]).powi(2) / vb[j] - 1.0 + (vb[j] / va[j]).ln())
            })
            .sum()
    };
    one(m1, v1, m2, v2) + one(m2, v2, m1, v1)
}

#[test]
fn recovers_two_separated_clusters() {
    let a = gaussian_frames(1000, &[5.0, 5.0], 1.0, 1);
    let b = gaussian_frames(1000, &[-5.0, -5.0], 1.0, 2);
    let model = fit_gmm(&concat(&a, &b), 2, 7).unwrap();
    for k in 0..2 {
        let sign = model.mean(k)[0].signum();
        for &m in model.mean(k) {
            assert!((m - 5.0 * sign).abs() < 0.2, "mean {m}");
        }
        for &v in model.variance(k) {
            assert!((v - 1.0).abs() < 0.2, "variance {v}");
        }
        assert!((model.weights()[k] - 0.5).abs() < 0.05);
    }
    assert!(model.fit_info().unwrap().converged);
}

#[test]
fn loglik_matches_naive_density_sum() {
    let model = GmmModel::new(
        3,
        vec![0.2, 0.5, 0.3],
        vec![0.0, 1.0, -1.0, 2.0, 2.0, 0.5, -1.5, 0.0, 1.0],
        vec![1.0, 0.5, 2.0, 0.8, 1.2, 1.0, 0.3, 2.5, 0.9],
    )
    .unwrap();
    let feats = gaussian_frames(200, &[0.3, 0.5, 0.1], 1.5, 3);
    let oracle: f64 = feats.frames().map(|x| naive_log_density(&model, x)).sum();
    let got = loglik(&model, &feats).unwrap();
    assert!(
        (got - oracle).abs() < 1e-9 * oracle.abs(),
        "{got} vs {oracle}"
    );
}

#[test]
fn sample_moments_follow_mixture() {
    let model = GmmModel::new(
        2,
        vec![0.3, 0.7],
        vec![-2.0, 1.0, 3.0, 0.0],
        vec![1.0, 0.5, 2.0, 1.5],
    )
    .unwrap();
    let n = 100_000;
    let draws = sample(&model, n, 42).unwrap();
    for j in 0..2 {
        let mean: f64 = (0..2).map(|k| model.weights()[k] * model.mean(k)[j]).sum();
        let second: f64 = (0..2)
            .map(|k| model.weights()[k] * (model.variance(k)[j] + model.mean(k)[j].powi(2)))
            .sum();
        let var = second - mean * mean;
        let got = draws.frames().map(|x| x[j]).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((got - mean).abs() < 3.0 * se, "dim {j}: {got} vs {mean}");
    }
}

#[test]
fn relabelling_components_is_invisible() {
    let w = vec![0.1, 0.6, 0.3];
    let mu = vec![0.0, 1.0, 2.0, -1.0, 4.0, 4.0];
    let var = vec![1.0, 1.0, 0.5, 0.5, 2.0, 2.0];
    let a = GmmModel::new(2, w.clone(), mu.clone(), var.clone()).unwrap();
    let order = [2, 0, 1];
    let pw = order.iter().map(|&k| w[k]).collect();
    let pm = order
        .iter()
        .flat_map(|&k| mu[2 * k..2 * k + 2].to_vec())
        .collect();
    let pv = order
        .iter()
        .flat_map(|&k| var[2 * k..2 * k + 2].to_vec())
        .collect();
    let b = GmmModel::new(2, pw, pm, pv).unwrap();
    assert_eq!(a, b);
    let feats = gaussian_frames(50, &[1.0, 1.0], 2.0, 8);
    assert_eq!(loglik(&a, &feats).unwrap(), loglik(&b, &feats).unwrap());
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let feats = gaussian_frames(400, &[0.0, 1.0, 2.0], 1.0, 5);
    assert_eq!(
        fit_gmm(&feats, 4, 11).unwrap(),
        fit_gmm(&feats, 4, 11).unwrap()
    );
}

#[test]
fn component_count_reduced_to_frame_count() {
    let feats = gaussian_frames(3, &[0.0, 0.0], 1.0, 2);
    let model = fit_gmm(&feats, 50, 0).unwrap();
    assert_eq!(model.components(), 3);
    assert_eq!(model.fit_info().unwrap().requested_components, 50);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_never_decreases_likelihood(seed in 0u64..1000, dim in 1usize..6, m in 1usize..8, n in 20usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let data: Vec<f64> = (0..n)
            .flat_map(|t| centres[t % 3].clone())
            .map(|c| c + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let feats = FeatureSequence::new(data, dim, "p").unwrap();
        let fit = fit_gmm_traced(&feats, &FitOptions::new(m, seed)).unwrap();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn kl_mc_matches_closed_form_for_gaussians() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..10 {
        let d = 4;
        let m1: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m2: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
        let p = GmmModel::new(d, vec![1.0], m1.clone(), v1.clone()).unwrap();
        let q = GmmModel::new(d, vec![1.0], m2.clone(), v2.clone()).unwrap();
        let truth = closed_form_kl(&m1, &v1, &m2, &v2);
        let est = kl_mc(&p, &q, &DistanceConfig::monte_carlo(100_000, trial)).unwrap();
        let tol = if truth < 0.2 { 0.01 } else { 0.05 * truth };
        assert!((est - truth).abs() < tol, "trial {trial}: {est} vs {truth}");
    }
}

#[test]
fn kl_mc_scales_with_separation() {
    let d = 10;
    let p = GmmModel::new(d, vec![1.0], vec![0.0; d], vec![1.0; d]).unwrap();
    let cfg = DistanceConfig::monte_carlo(20_000, 1);
    let far = GmmModel::new(d, vec![1.0], vec![10.0; d], vec![1.0; d]).unwrap();
    let near = GmmModel::new(d, vec![1.0], vec![5.0; d], vec![1.0; d]).unwrap();
    let (kf, kn) = (
        kl_mc(&p, &far, &cfg).unwrap(),
        kl_mc(&p, &near, &cfg).unwrap(),
    );
    assert!((kf - 1000.0).abs() < 0.05 * 1000.0, "{kf}");
    assert!((kn - 250.0).abs() < 0.05 * 250.0, "{kn}");
    assert!(kf > kn);
}

#[test]
fn kl_marginal_orders_by_shift() {
    let base = [0.0, 0.0, 0.0];
    let a = gaussian_frames(800, &base, 1.0, 1);
    let b = gaussian_frames(800, &base, 1.0, 2);
    let c = gaussian_frames(800, &[1.0, 1.0, 1.0], 1.0, 3);
    let d = gaussian_frames(800, &[4.0, 4.0, 4.0], 1.0, 4);
    let fit = |f: &FeatureSequence| fit_gmm(f, 4, 0).unwrap();
    let (ma, mb, mc, md) = (fit(&a), fit(&b), fit(&c), fit(&d));
    let ab = kl_marginal(&ma, &mb, &a, &b).unwrap();
    let ac = kl_marginal(&ma, &mc, &a, &c).unwrap();
    let ad = kl_marginal(&ma, &md, &a, &d).unwrap();
    assert!(ab < ac && ac < ad, "{ab} {ac} {ad}");
    assert_eq!(kl_marginal(&ma, &ma, &a, &a).unwrap(), 0.0);
}

#[test]
fn mean_feature_matches_compensated_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, d) = (7750, 19);
    let data: Vec<f64> = (0..n * d)
        .map(|_| rng.gen_range(-50.0..50.0) + 1e6)
        .collect();
    let feats = FeatureSequence::new(data.clone(), d, "m").unwrap();
    let got = mean_feature(&feats).unwrap();
    for j in 0..d {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for t in 0..n {
            let y = data[t * d + j] - comp;
            let s = sum + y;
            comp = (s - sum) - y;
            sum = s;
        }
        let oracle = sum / n as f64;
        assert!(
            (got.values()[j] - oracle).abs() < 1e-12 * oracle.abs(),
            "dim {j}"
        );
    }
}
