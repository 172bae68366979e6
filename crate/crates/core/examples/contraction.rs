//! `I_DVG(ρ) = inf_j I_BFG(ρ, j)`: the contraction solver against the direct
//! variational formula on random chains.

use markov_ldp::chain::{GeneratorMatrix, ProbVector};
use markov_ldp::estimate::contract_dvg_from_bfg;
use markov_ldp::ratefun::dvg_rate;
use markov_ldp::rng::{stream, Domain};
use markov_ldp::Result;
use rand::Rng;

pub struct Row {
    pub n_states: usize,
    pub contraction: f64,
    pub direct: f64,
    pub gap: f64,
}

pub fn run_example(instances: u64) -> Result<Vec<Row>> {
    (0..instances)
        .map(|i| {
            let mut rng = stream(21, Domain::Test, 0, i);
            let n = rng.random_range(2..=4);
            let rates: Vec<Vec<f64>> =
                (0..n).map(|x| (0..n).map(|y| if x == y { 0.0 } else { rng.random_range(0.2..3.0) }).collect()).collect();
            let q = GeneratorMatrix::from_off_diagonal(&rates)?;
            let rho = ProbVector::normalized((0..n).map(|_| rng.random_range(0.05..1.0)).collect())?;
            let c = contract_dvg_from_bfg(&rho, &q)?;
            Ok(Row { n_states: n, contraction: c.value, direct: dvg_rate(&rho, &q)?.value, gap: c.gap })
        })
        .collect()
}

#[allow(dead_code)]
fn main() -> Result<()> {
    println!("{:>2} {:>12} {:>12} {:>10}", "n", "contraction", "I_DVG", "gap");
    for r in run_example(20)? {
        println!("{:>2} {:>12.8} {:>12.8} {:>10.1e}", r.n_states, r.contraction, r.direct, r.gap);
    }
    Ok(())
}
