//! Occupation rate of the symmetric two-state chain recovered from bridge
//! samples: `inf { I(k, θ) : Σ k = ρ } / T0` against `(√ρ₁ − √ρ₂)²`.

use markov_ldp::chain::{transition_at, validate_generator, ProbVector};
use markov_ldp::estimate::{build_oracle, infconv_dvg};
use markov_ldp::{LawMode, Result};

pub struct Row {
    pub t0: f64,
    pub value: f64,
    pub lower_bound: f64,
    pub closed_form: f64,
}

pub fn run_example(samples: usize, t0_grid: &[f64]) -> Result<Vec<Row>> {
    let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?;
    let rho = ProbVector::new(vec![0.7, 0.3])?;
    let closed_form = (rho[0].sqrt() - rho[1].sqrt()).powi(2);
    let mut rows = Vec::new();
    for &t0 in t0_grid {
        let oracle = build_oracle(&q, t0, LawMode::Occupation, samples, 7)?;
        let p = transition_at(&q, t0)?;
        let r = infconv_dvg(&rho, &oracle, &p, t0)?;
        rows.push(Row { t0, value: r.value.to_f64(), lower_bound: r.certificate.lower_bound, closed_form });
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    println!("{:>5} {:>10} {:>10} {:>10}", "T0", "infconv", "dual bd", "closed");
    for r in run_example(100_000, &[0.5, 1.0, 2.0])? {
        println!("{:>5} {:>10.6} {:>10.6} {:>10.6}", r.t0, r.value, r.lower_bound, r.closed_form);
    }
    Ok(())
}
