//! Joint occupation/flux rate from bridge samples: `inf { I(k, θ) : Σ k = (ρ, j) } / T0`
//! against `I_BFG(ρ, j)`, including a target that is not divergence-free.

use markov_ldp::chain::{invariant_measure, transition_at, validate_generator, ProbVector};
use markov_ldp::estimate::{build_oracle, infconv_bfg};
use markov_ldp::ratefun::bfg_rate;
use markov_ldp::{ExtReal, FluxMatrix, LawMode, Result};

pub struct Row {
    pub label: &'static str,
    pub value: ExtReal,
    pub reference: ExtReal,
}

pub fn run_example(samples: usize) -> Result<Vec<Row>> {
    let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?;
    let t0 = 1.0;
    let oracle = build_oracle(&q, t0, LawMode::Flux, samples, 5)?;
    let p = transition_at(&q, t0)?;
    let pi = invariant_measure(&q)?;
    let half = ProbVector::uniform(2);
    let targets = [
        ("(π, π⊗Q)", pi.clone(), FluxMatrix::product(&pi, &q)),
        ("j = 1", half.clone(), FluxMatrix::new(&[vec![0.0, 1.0], vec![1.0, 0.0]])?),
        ("div j ≠ 0", half, FluxMatrix::new(&[vec![0.0, 0.6], vec![0.5, 0.0]])?),
    ];
    targets
        .into_iter()
        .map(|(label, rho, j)| {
            let r = infconv_bfg(&rho, &j, &oracle, &p, t0)?;
            Ok(Row { label, value: r.value, reference: bfg_rate(&rho, &j, &q) })
        })
        .collect()
}

#[allow(dead_code)]
fn main() -> Result<()> {
    println!("{:<12} {:>10} {:>10}", "target", "infconv", "I_BFG");
    for r in run_example(100_000)? {
        println!("{:<12} {:>10.6} {:>10.6}", r.label, r.value, r.reference);
    }
    Ok(())
}
