use oam_memory::bench::*;
use proptest::prelude::*;

/// Exhaustive search over acceptance strategies: every vertex of the
/// acceptance polytope accepts a subset of photon numbers fully and at most
/// one more partially, so enumerating subsets plus a fractional index finds
/// the optimum of the linear program.
fn brute_force(weights: &[f64], eta: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let f = |n: usize| (n as f64 + 1.0) / (n as f64 + 2.0);
    let n = p.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        let full: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| p[k]).sum();
        if full > eta + 1e-15 {
            continue;
        }
        let gain: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| p[k] * f(k)).sum();
        let rest = eta - full;
        if rest <= 1e-15 {
            best = best.max(gain / full);
            continue;
        }
        for j in (0..n).filter(|k| mask >> k & 1 == 0) {
            if p[j] >= rest {
                best = best.max((gain + rest * f(j)) / eta);
            }
        }
    }
    best
}

fn truncated_poisson(mean: f64, nmax: usize) -> Vec<f64> {
    let mut w = vec![(-mean).exp()];
    for n in 1..=nmax {
        let prev = w[n - 1];
        w.push(prev * mean / n as f64);
    }
    w
}

#[test]
fn analytic_threshold_matches_enumeration() {
    for mean in [0.05, 0.3, 0.6, 1.5, 4.0] {
        let w = truncated_poisson(mean, 10);
        for k in 1..=20 {
            let eta = 0.05 * k as f64;
            let a = threshold_for_distribution(&w, eta);
            let b = brute_force(&w, eta);
            assert!((a - b).abs() < 1e-9, "n={mean} eta={eta}: {a} vs {b}");
        }
    }
}

#[test]
fn operating_point_matches_enumeration_to_fifty_photons() {
    // direct greedy sum over N ≤ 50, independent of the library's truncation
    let w = truncated_poisson(0.6, 50);
    let mut remaining = 0.15;
    let mut acc = 0.0;
    for n in (0..=50).rev() {
        let take: f64 = w[n].min(remaining);
        acc += take * (n as f64 + 1.0) / (n as f64 + 2.0);
        remaining -= take;
    }
    let oracle = acc / 0.15;
    assert!((classical_threshold(0.6, 0.15) - oracle).abs() < 1e-10);
    assert!(oracle < 0.925);
}

#[test]
fn unit_efficiency_is_the_plain_poisson_mean() {
    for mean in [0.01, 0.2, 1.0, 5.0] {
        let w = truncated_poisson(mean, 80);
        let plain: f64 = w.iter().enumerate().map(|(n, p)| p * (n as f64 + 1.0) / (n as f64 + 2.0)).sum();
        assert!((classical_threshold(mean, 1.0) - plain).abs() < 1e-12);
    }
}

#[test]
fn threshold_monotone_on_grid() {
    let means = log_grid(0.05, 5.0, 20);
    let etas: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
    for (i, &n) in means.iter().enumerate() {
        for (j, &e) in etas.iter().enumerate() {
            let t = classical_threshold(n, e);
            assert!((0.5..1.0).contains(&t));
            if j > 0 {
                assert!(t <= classical_threshold(n, etas[j - 1]) + 1e-12);
            }
            if i > 0 {
                assert!(t >= classical_threshold(means[i - 1], e) - 1e-12);
            }
        }
    }
}

#[test]
fn reported_memory_beats_the_bound() {
    let v = verdict(&BenchmarkInput {
        mean_photon_number: 0.6,
        eta: 0.15,
        eta_sigma: 0.02,
        fidelity: 0.925,
        fidelity_sigma: 0.02,
        vacuum: VacuumConvention::Included,
    })
    .unwrap();
    assert!(v.is_quantum);
    assert!(v.sigmas > 3.0, "{}", v.sigmas);
    assert!(v.threshold_lo <= v.threshold && v.threshold <= v.threshold_hi);
}

#[test]
fn bright_pulses_defeat_a_mediocre_memory() {
    let v = verdict(&BenchmarkInput {
        mean_photon_number: 5.0,
        eta: 0.15,
        eta_sigma: 0.02,
        fidelity: 0.8,
        fidelity_sigma: 0.02,
        vacuum: VacuumConvention::Included,
    })
    .unwrap();
    assert!(!v.is_quantum);
}

#[test]
fn capacity_scaling() {
    let base = mode_capacity(200e-6, 50e-6).unwrap();
    assert!((50..=200).contains(&base));
    assert!(mode_capacity(50e-6, 50e-6).unwrap() < 10);
    for wc in [60e-6, 150e-6, 333e-6] {
        let a = mode_capacity(wc, 50e-6).unwrap() as f64;
        let b = mode_capacity(2.0 * wc, 50e-6).unwrap() as f64;
        assert!((b - 4.0 * a).abs() <= 4.0, "{a} {b}");
    }
    assert!(mode_capacity(0.0, 1.0).is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let good = BenchmarkInput {
        mean_photon_number: 0.6,
        eta: 0.15,
        eta_sigma: 0.0,
        fidelity: 0.9,
        fidelity_sigma: 0.0,
        vacuum: VacuumConvention::Excluded,
    };
    assert!(verdict(&good).is_ok());
    assert!(verdict(&BenchmarkInput { eta: 0.0, ..good }).is_err());
    assert!(verdict(&BenchmarkInput { mean_photon_number: -1.0, ..good }).is_err());
}

proptest! {
    #[test]
    fn threshold_bounds(mean in 1e-3..8.0f64, eta in 1e-3..1.0f64) {
        for vac in [VacuumConvention::Included, VacuumConvention::Excluded] {
            let t = classical_threshold_with(mean, eta, vac);
            prop_assert!((0.5..1.0).contains(&t));
        }
        prop_assert!(classical_threshold_with(mean, eta, VacuumConvention::Excluded) >= classical_threshold(mean, eta) - 1e-12);
    }

    #[test]
    fn fock_fidelity_strictly_increasing(n in 0u64..1_000_000) {
        prop_assert!(classical_fidelity_fock(n + 1) > classical_fidelity_fock(n));
        prop_assert!((0.5..1.0).contains(&classical_fidelity_fock(n)));
    }
}
