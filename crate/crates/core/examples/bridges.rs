//! Bridge kernels of a two-state chain and exact rejection sampling.

use markov_ldp::bridge::{bridge_generator, bridge_transition, BridgeSampler, BridgeSpec};
use markov_ldp::chain::validate_generator;
use markov_ldp::rng::{stream, Domain};
use markov_ldp::Result;

pub struct Summary {
    pub chapman_kolmogorov: f64,
    pub generator_fd: f64,
    pub acceptance: f64,
    pub expected_acceptance: f64,
}

pub fn run_example(draws: u64) -> Result<Summary> {
    let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?;
    let spec = BridgeSpec::new(q, 0, 1, 1.0)?;

    // P^{xy}(0.2, 0.7) = Σ_c P^{xy}(0.2, 0.4) P^{xy}(0.4, 0.7)
    let mut chapman_kolmogorov = 0.0_f64;
    for a in 0..2 {
        for b in 0..2 {
            let direct = bridge_transition(&spec, a, b, 0.2, 0.7)?;
            let split: f64 = (0..2)
                .map(|c| Ok(bridge_transition(&spec, a, c, 0.2, 0.4)? * bridge_transition(&spec, c, b, 0.4, 0.7)?))
                .sum::<Result<f64>>()?;
            chapman_kolmogorov = chapman_kolmogorov.max((direct - split).abs());
        }
    }

    let h = 1e-5;
    let fd = bridge_transition(&spec, 0, 1, 0.3, 0.3 + h)? / h;
    let generator_fd = (fd - bridge_generator(&spec, 0, 1, 0.3)?).abs();

    let sampler = BridgeSampler::new(spec.clone());
    let mut attempts = 0;
    for i in 0..draws {
        attempts += sampler.draw(&mut stream(3, Domain::Test, 0, i))?.attempts;
    }
    Ok(Summary { chapman_kolmogorov, generator_fd, acceptance: draws as f64 / attempts as f64, expected_acceptance: spec.endpoint_prob() })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let s = run_example(100_000)?;
    println!("Chapman–Kolmogorov error   {:.2e}", s.chapman_kolmogorov);
    println!("finite-difference error    {:.2e}", s.generator_fd);
    println!("acceptance rate            {:.5} (P_01(1) = {:.5})", s.acceptance, s.expected_acceptance);
    Ok(())
}
