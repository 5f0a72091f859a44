use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hetnoma::geometry::{derived_stats, sample_scheduled_distances};
use hetnoma::montecarlo::{
    estimate_coverage, estimate_throughput, extracted_scheduled_distances, simulate_range, simulate_sir_samples,
    SimMode, SimOptions,
};
use hetnoma::{Analytics, NetworkConfig, PowerAllocation, Scheme, TierParams};

fn reference_network(lambda2: f64) -> NetworkConfig {
    NetworkConfig::new(
        vec![TierParams::new(20.0, 1e-6, 1.0).unwrap(), TierParams::new(5.0, lambda2, 1.0).unwrap()],
        5e-4,
        4.0,
        2,
        1.0,
    )
    .unwrap()
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_distance(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn standard_error_shrinks_with_the_root_of_the_trials() {
    let cfg = reference_network(5e-4);
    let a = PowerAllocation::new(vec![0.25, 0.75]).unwrap();
    let est = |trials: u64| {
        let b = simulate_sir_samples(&cfg, &a, 1, Scheme::NonCoordinated, SimMode::FastPath, trials, 11).unwrap();
        estimate_coverage(&b, &a, 1.0, Scheme::NonCoordinated).unwrap()
    };
    let (small, large) = (est(5_000), est(20_000));
    for k in 0..2 {
        let (hs, hl) = (small.ci_halfwidth.as_ref().unwrap()[k], large.ci_halfwidth.as_ref().unwrap()[k]);
        let ratio = hs / hl;
        assert!((ratio - 2.0).abs() < 0.2, "k={k}: half-width ratio {ratio}");
        let gap = (small.value(k).unwrap() - large.value(k).unwrap()).abs();
        assert!(gap < hs + hl, "k={k}: estimates differ by {gap}");
    }
}

#[test]
fn sole_user_rate_matches_analytics() {
    let cfg = NetworkConfig::new(vec![TierParams::new(1.0, 1e-4, 1.0).unwrap()], 1e-2, 4.0, 1, 1.0).unwrap();
    let a = PowerAllocation::single();
    let b = simulate_sir_samples(&cfg, &a, 0, Scheme::NonCoordinated, SimMode::FastPath, 40_000, 2).unwrap();
    let est = estimate_throughput(&b, &a, Scheme::NonCoordinated).unwrap();
    let exact = Analytics::new(&cfg).unwrap().single_user_throughput(0).unwrap();
    let half = est.ci_halfwidth.unwrap()[0];
    // 95% half-width is about two standard errors.
    assert!((est.per_user[0].unwrap() - exact).abs() < half, "{:?} vs {exact}", est.per_user);
}

#[test]
fn any_partition_of_trials_merges_to_the_same_batch() {
    let cfg = reference_network(3e-4);
    let a = PowerAllocation::new(vec![0.25, 0.75]).unwrap();
    let opts = SimOptions::default();
    let run = |r: std::ops::Range<u64>| {
        simulate_range(&cfg, &a, 0, Scheme::CoordinatedJt, SimMode::FastPath, r, 8, &opts).unwrap()
    };
    let whole = run(0..300);
    let parts = run(170..300).merge(run(0..50)).unwrap().merge(run(50..170)).unwrap();
    assert_eq!(whole, parts);
    assert!(run(0..50).merge(run(40..60)).is_err());
}

#[test]
fn ordered_distance_sampler_matches_full_deployments() {
    let cfg = NetworkConfig::new(vec![TierParams::new(1.0, 1e-4, 1.0).unwrap()], 1e-6, 4.0, 1, 1.0).unwrap();
    let total = derived_stats(&cfg).scaled_total_intensity;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10_000;
    let fast: Vec<f64> = (0..n).map(|_| sample_scheduled_distances(1, total, &mut rng)[0]).collect();
    let window = (25.0 / (std::f64::consts::PI * 1e-4)).sqrt();
    let slow: Vec<f64> = (0..n)
        .map(|_| extracted_scheduled_distances(&cfg, window, &mut rng).unwrap()[0])
        .collect();
    let d = ks_distance(fast, slow);
    assert!(d < 0.02, "KS distance {d}");
}

#[test]
fn equal_split_never_decodes_in_either_mode() {
    let cfg = reference_network(5e-4);
    let a = PowerAllocation::new(vec![0.5, 0.5]).unwrap();
    for mode in [SimMode::FastPath, SimMode::FullNetwork] {
        let trials = if mode == SimMode::FastPath { 200 } else { 10 };
        let b = simulate_sir_samples(&cfg, &a, 1, Scheme::NonCoordinated, mode, trials, 4).unwrap();
        let c = estimate_coverage(&b, &a, 1.0, Scheme::NonCoordinated).unwrap();
        assert_eq!(c.per_user, vec![Some(0.0), Some(0.0)]);
    }
}
