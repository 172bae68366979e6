//! Transition kernels by uniformization, invariant measures and irreducibility.

use markov_ldp::chain::{dtmc_invariant, invariant_measure, is_irreducible, transition_at, GeneratorMatrix};
use markov_ldp::Result;

pub struct Summary {
    pub pi: Vec<f64>,
    pub p11_half: f64,
    pub semigroup_error: f64,
    pub dtmc_error: f64,
}

pub fn run_example() -> Result<Summary> {
    let q = GeneratorMatrix::from_off_diagonal(&[vec![0.0, 2.0, 0.5], vec![1.0, 0.0, 1.0], vec![0.5, 3.0, 0.0]])?;
    assert!(is_irreducible(&q));
    let pi = invariant_measure(&q)?;

    // P(s + t) = P(s) P(t)
    let lhs = transition_at(&q, 1.5)?;
    let rhs = transition_at(&q, 0.5)?.compose(&transition_at(&q, 1.0)?);
    let semigroup_error = (lhs.matrix() - rhs.matrix()).amax();

    let mu = dtmc_invariant(&lhs)?;
    let dtmc_error = mu.sup_distance(&pi);

    let sym = GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1.0], vec![1.0, 0.0]])?;
    let p11_half = transition_at(&sym, 0.5)?.prob(0, 0);
    Ok(Summary { pi: pi.as_slice().to_vec(), p11_half, semigroup_error, dtmc_error })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let s = run_example()?;
    println!("invariant measure       {:?}", s.pi);
    println!("P11(0.5), two-state     {:.6} (closed form {:.6})", s.p11_half, (1.0 + (-1.0f64).exp()) / 2.0);
    println!("semigroup error         {:.2e}", s.semigroup_error);
    println!("|μ(P(1.5)) − π|_∞       {:.2e}", s.dtmc_error);
    Ok(())
}
