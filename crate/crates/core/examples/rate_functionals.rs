//! Closed-form checks of the occupation, flux, pair-empirical and conditional rates.

use std::sync::Arc;

use markov_ldp::chain::{transition_at, validate_generator, ProbVector};
use markov_ldp::conjugate::DiscreteLaw;
use markov_ldp::ratefun::{bfg_rate, cond_rate, dvg_rate, pair_empirical_rate, rel_entropy};
use markov_ldp::{ConjugateOracle, FluxField, FluxMatrix, PairMeasure, Result};

pub struct Row {
    pub name: &'static str,
    pub value: f64,
    pub expected: f64,
}

pub fn run_example() -> Result<Vec<Row>> {
    let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?;
    let mut rows = Vec::new();
    for r in [0.7, 0.9, 1.0] {
        let rho = ProbVector::new(vec![r, 1.0 - r])?;
        let expected = (r.sqrt() - (1.0 - r).sqrt()).powi(2);
        rows.push(Row { name: "I_DVG", value: dvg_rate(&rho, &q)?.value, expected });
    }

    let half = ProbVector::uniform(2);
    let j = FluxMatrix::new(&[vec![0.0, 1.0], vec![1.0, 0.0]])?;
    let expected = 2.0 * rel_entropy(1.0, 0.5)?.to_f64();
    rows.push(Row { name: "I_BFG", value: bfg_rate(&half, &j, &q).to_f64(), expected });

    let p = transition_at(&q, 0.5)?;
    let uniform = PairMeasure::new(&[vec![0.25, 0.25], vec![0.25, 0.25]])?;
    let (a, b) = (p.prob(0, 0), p.prob(0, 1));
    let expected = 2.0 * (rel_entropy(0.25, 0.5 * a)?.to_f64() + rel_entropy(0.25, 0.5 * b)?.to_f64());
    rows.push(Row { name: "pair-empirical", value: pair_empirical_rate(&uniform, &p).to_f64(), expected });

    // one charged pair with a Bernoulli(1/2) law: φ*(a) = a ln a + (1−a) ln(1−a) + ln 2
    let mut oracle = ConjugateOracle::new(2, 1);
    oracle.set_law(0, 1, Arc::new(DiscreteLaw::bernoulli(0.5)?))?;
    let theta = PairMeasure::new(&[vec![0.0, 1.0], vec![0.0, 0.0]])?;
    let mut k = FluxField::zeros(2, 1);
    k.get_mut(0, 1)[0] = 0.9;
    let expected = 0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln() + 2f64.ln();
    rows.push(Row { name: "conditional", value: cond_rate(&k, &theta, &oracle)?.to_f64(), expected });
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    for r in run_example()? {
        println!("{:<15} {:>12.8} {:>12.8}", r.name, r.value, r.expected);
    }
    Ok(())
}
