//! Every runnable example, exercised at small sizes.

#[path = "../examples/bridges.rs"]
mod bridges;
#[path = "../examples/chain_basics.rs"]
mod chain_basics;
#[path = "../examples/cli_run.rs"]
mod cli_run;
#[path = "../examples/conjugates.rs"]
mod conjugates;
#[path = "../examples/contraction.rs"]
mod contraction;
#[path = "../examples/discrete_embedding.rs"]
mod discrete_embedding;
#[path = "../examples/flux_infconv.rs"]
mod flux_infconv;
#[path = "../examples/flux_mgf_bound.rs"]
mod flux_mgf_bound;
#[path = "../examples/mc_decay.rs"]
mod mc_decay;
#[path = "../examples/occupation_infconv.rs"]
mod occupation_infconv;
#[path = "../examples/rate_functionals.rs"]
mod rate_functionals;

use markov_ldp::ExtReal;

#[test]
fn chain_basics_runs() {
    let s = chain_basics::run_example().unwrap();
    assert!((s.p11_half - (1.0 + (-1.0f64).exp()) / 2.0).abs() < 1e-12);
    assert!(s.semigroup_error < 1e-9 && s.dtmc_error < 1e-9);
}

#[test]
fn rate_functionals_match_closed_forms() {
    for r in rate_functionals::run_example().unwrap() {
        assert!((r.value - r.expected).abs() < 1e-6, "{}: {} vs {}", r.name, r.value, r.expected);
    }
}

#[test]
fn conjugates_runs() {
    let s = conjugates::run_example(20_000).unwrap();
    for (a, e, x) in s.bernoulli {
        assert!((e - x).abs() < 0.02, "a = {a}: {e} vs {x}");
    }
    assert!((s.chernoff_poisson - (3.0 * 3f64.ln() - 2.0)).abs() < 1e-6);
    assert!(s.superlinear);
}

#[test]
fn bridges_runs() {
    let s = bridges::run_example(5_000).unwrap();
    assert!(s.chapman_kolmogorov < 1e-8 && s.generator_fd < 1e-3);
    assert!((s.acceptance - s.expected_acceptance).abs() < 0.03);
}

#[test]
fn discrete_embedding_runs() {
    let s = discrete_embedding::run_example(2_000).unwrap();
    assert_eq!(s.windows, 2_000);
    assert!(s.sum_error < 1e-12);
    assert!(s.imbalance <= 1.0 / 2_000.0 + 1e-15);
    assert!(s.pair_lln_error < 0.03);
}

#[test]
fn contraction_runs() {
    for r in contraction::run_example(5).unwrap() {
        assert!((r.contraction - r.direct).abs() < 1e-4 && r.gap.abs() < 1e-6);
    }
}

#[test]
fn occupation_infconv_runs() {
    let rows = occupation_infconv::run_example(5_000, &[1.0]).unwrap();
    assert!((rows[0].value - rows[0].closed_form).abs() < 0.02);
    assert!((rows[0].value - rows[0].lower_bound).abs() < 1e-7);
}

#[test]
fn flux_infconv_runs() {
    let rows = flux_infconv::run_example(5_000).unwrap();
    assert!(rows[0].value.to_f64() < 0.01);
    assert!((rows[1].value.to_f64() - rows[1].reference.to_f64()).abs() < 0.05);
    assert_eq!(rows[2].value, ExtReal::PosInf);
    assert_eq!(rows[2].reference, ExtReal::PosInf);
}

#[test]
fn flux_mgf_bound_runs() {
    let rows = flux_mgf_bound::run_example(5_000).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.empirical <= r.bound));
}

#[test]
fn mc_decay_runs() {
    let s = mc_decay::run_example(20_000, vec![10, 20, 30, 40]).unwrap();
    assert!(s.fit.slope > 0.0);
    assert!((s.reference - 0.0709).abs() < 1e-3);
}

#[test]
fn cli_run_runs() {
    let dir = tempfile::tempdir().unwrap();
    let tables = cli_run::run_example(dir.path()).unwrap();
    assert!(tables[0].lines().nth(1).unwrap().starts_with("0,dvg,"));
    let first: f64 = tables[0].lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(first.abs() < 1e-8);
}
