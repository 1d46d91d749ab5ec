use flowrca::seed;
use flowrca::stats::{exact_perm_test, kl_divergence, two_sample_perm_test, welch_t_test, KlEstimator, TestStatistic};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn permutation_p_values_are_calibrated_under_the_null() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    // 1000 runs rather than 100: at 100 the 0.05 +- 0.03 band is only a two-sigma band.
    let runs = 1000;
    let rejections = (0..runs)
        .filter(|&r| {
            let mut rng = seed::rng(seed::derive(42, "null-sample", r));
            let a: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            two_sample_perm_test(&a, &b, TestStatistic::MeanDiff, 199, r).unwrap() < 0.05
        })
        .count();
    let rate = rejections as f64 / runs as f64;
    assert!((rate - 0.05).abs() <= 0.03, "rejection rate {rate}");
}

#[test]
fn permutation_examples() {
    let same = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(two_sample_perm_test(&same, &same, TestStatistic::MeanDiff, 999, 0).unwrap(), 1.0);
    let exact = exact_perm_test(&[1.0, 2.0, 3.0], &[100.0, 101.0, 102.0], TestStatistic::MeanDiff).unwrap();
    // Two-sided: the observed split and its mirror are the two extremes of 20.
    assert!((exact.p_value - 2.0 / 20.0).abs() < 1e-15);
    let shift = exact_perm_test(&[1.0, 2.0, 3.0], &[100.0, 101.0, 102.0], TestStatistic::MeanShift).unwrap();
    assert!((shift.p_value - 1.0 / 20.0).abs() < 1e-15);
}

#[test]
fn welch_separates_clearly_different_score_samples() {
    let mut rng = seed::rng(5);
    let a: Vec<f64> = (0..20).map(|_| 0.016 + rng.random_range(-0.002..0.002)).collect();
    let b: Vec<f64> = (0..20).map(|_| 0.001 + rng.random_range(-0.002..0.002)).collect();
    let r = welch_t_test(&a, &b).unwrap();
    assert!(r.t > 0.0 && r.p < 0.01);
    let hand = welch_t_test(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
    assert!((hand.t + 1.224_744_871).abs() < 1e-8 && (hand.df - 4.0).abs() < 1e-12);
}

#[test]
fn knn_estimate_shrinks_towards_zero_with_more_samples() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let median_abs = |n: usize| {
        let mut v: Vec<f64> = (0..9u64)
            .map(|s| {
                let mut rng = seed::rng(seed::derive(7, "kl-convergence", s * 100_000 + n as u64));
                let p: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                let q: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                kl_divergence(&p, &q, KlEstimator::Knn { k: 5 }).unwrap().abs()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (small, large) = (median_abs(100), median_abs(10_000));
    assert!(large <= small, "n=100: {small}, n=10000: {large}");
}

#[test]
fn discrete_estimator_is_never_negative() {
    let mut rng = seed::rng(9);
    for _ in 0..50 {
        let p: Vec<f64> = (0..30).map(|_| rng.random_range(0..4) as f64).collect();
        // q holds every value, so p's support is covered.
        let q: Vec<f64> = (0..30)
            .map(|_| rng.random_range(0..4) as f64)
            .chain([0.0, 1.0, 2.0, 3.0])
            .collect();
        assert!(kl_divergence(&p, &q, KlEstimator::Discrete).unwrap() >= 0.0);
    }
}
