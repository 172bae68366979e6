//! Monte Carlo checks of the bridge sampler against the exact kernels.

use markov_ldp::bridge::{bridge_transition, conditional_samples, BridgeSampler, BridgeSpec};
use markov_ldp::chain::{invariant_measure, transition_at, validate_generator};
use markov_ldp::rng::{stream, Domain};
use markov_ldp::{GeneratorMatrix, LawMode};

fn three_state() -> GeneratorMatrix {
    validate_generator(&[vec![-1.5, 1.0, 0.5], vec![0.7, -1.0, 0.3], vec![0.4, 1.6, -2.0]]).unwrap()
}

#[test]
fn midpoint_marginal_matches_kernel() {
    let spec = BridgeSpec::new(three_state(), 0, 2, 1.0).unwrap();
    let sampler = BridgeSampler::new(spec.clone());
    let n = 20_000;
    let mut counts = [0u64; 3];
    for i in 0..n {
        let d = sampler.draw(&mut stream(11, Domain::Test, 0, i)).unwrap();
        assert_eq!(d.path.initial, 0);
        assert_eq!(d.path.final_state(), 2);
        counts[d.path.state_at(0.5)] += 1;
    }
    let tv: f64 =
        (0..3).map(|b| (counts[b] as f64 / n as f64 - bridge_transition(&spec, 0, b, 0.0, 0.5).unwrap()).abs()).sum::<f64>() / 2.0;
    // typical TV at this size is about 4e-3
    assert!(tv < 0.015, "TV = {tv}");
}

#[test]
fn acceptance_rate_is_endpoint_probability() {
    let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    let spec = BridgeSpec::new(q, 0, 1, 0.5).unwrap();
    let p = spec.endpoint_prob();
    assert!((p - 0.31606).abs() < 1e-5);
    let sampler = BridgeSampler::new(spec);
    let (mut draws, mut attempts) = (0u64, 0u64);
    while attempts < 100_000 {
        attempts += sampler.draw(&mut stream(12, Domain::Test, 0, draws)).unwrap().attempts;
        draws += 1;
    }
    let rate = draws as f64 / attempts as f64;
    let sigma = (p * (1.0 - p) / attempts as f64).sqrt();
    assert!((rate - p).abs() < 3.0 * sigma, "{rate} vs {p} ± {sigma}");
}

#[test]
fn tiny_rejection_budget_is_reported() {
    let q = validate_generator(&[vec![-0.01, 0.01], vec![0.01, -0.01]]).unwrap();
    let sampler = BridgeSampler::new(BridgeSpec::new(q, 0, 1, 0.1).unwrap()).with_budget(3);
    let e = sampler.draw(&mut stream(1, Domain::Test, 0, 0)).unwrap_err();
    assert_eq!(e.kind(), "RejectionBudgetExceeded");
}

#[test]
fn short_bridges_stay_home() {
    let spec = BridgeSpec::new(three_state(), 1, 1, 0.05).unwrap();
    let law = conditional_samples(&spec, LawMode::Occupation, 20_000, 4).unwrap();
    let mean_home = law.iter().map(|a| a[1]).sum::<f64>() / law.count() as f64;
    assert!(mean_home > 0.99, "{mean_home}");
}

#[test]
fn flux_samples_are_consistent_with_the_skeleton() {
    let q = three_state();
    let t0 = 0.8;
    let spec = BridgeSpec::new(q, 2, 0, t0).unwrap();
    let law = conditional_samples(&spec, LawMode::Flux, 2_000, 9).unwrap();
    for a in law.iter() {
        let occupation: f64 = a[..3].iter().sum();
        assert!((occupation - 1.0).abs() < 1e-12);
        let jumps: f64 = a[3..].iter().map(|f| f * t0).sum();
        assert!((jumps - jumps.round()).abs() < 1e-9 && jumps >= 1.0);
        assert!((0..3).all(|x| a[3 + 4 * x] == 0.0), "diagonal flux must vanish");
    }
}

#[test]
fn stationary_mixture_of_bridge_fluxes() {
    // Σ_y π_x P_xy(T0) E[W_xy(T0)/T0 | x, y] = π_x Q_xy
    let q = validate_generator(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
    let t0 = 1.0;
    let p = transition_at(&q, t0).unwrap();
    let pi = invariant_measure(&q).unwrap();
    let mut mixed = [[0.0; 2]; 2];
    for x in 0..2 {
        for y in 0..2 {
            let law = conditional_samples(&BridgeSpec::new(q.clone(), x, y, t0).unwrap(), LawMode::Flux, 250_000, 21).unwrap();
            let w = pi[x] * p.prob(x, y) / law.count() as f64;
            for a in law.iter() {
                for u in 0..2 {
                    for v in 0..2 {
                        mixed[u][v] += w * a[2 + 2 * u + v];
                    }
                }
            }
        }
    }
    for (u, v) in [(0, 1), (1, 0)] {
        let target = pi[u] * q.rate(u, v);
        assert!((mixed[u][v] / target - 1.0).abs() < 0.02, "({u},{v}): {} vs {target}", mixed[u][v]);
    }
}
