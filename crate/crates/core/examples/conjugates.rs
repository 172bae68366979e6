//! Empirical Legendre–Fenchel conjugates against exact ones, the Chernoff
//! tail bound and the superlinearity diagnostic.

use markov_ldp::conjugate::{chernoff_bound, conjugate, superlinearity_check, ConjugateSettings, DiscreteLaw, Poisson};
use markov_ldp::rng::{stream, Domain};
use markov_ldp::{EmpiricalLaw, Result};
use rand::Rng;

pub struct Summary {
    /// `(a, empirical φ*(a), exact φ*(a))`.
    pub bernoulli: Vec<(f64, f64, f64)>,
    pub chernoff_poisson: f64,
    pub superlinear: bool,
}

pub fn run_example(samples: usize) -> Result<Summary> {
    let settings = ConjugateSettings::default();
    let mut rng = stream(1, Domain::Test, 0, 0);
    let draws: Vec<f64> = (0..samples).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
    let empirical = EmpiricalLaw::new(1, draws)?;
    let exact = DiscreteLaw::bernoulli(0.5)?;
    let mut bernoulli = Vec::new();
    for a in [0.2, 0.5, 0.9] {
        let e = conjugate(&empirical, &[a], &settings)?.to_f64();
        let x = conjugate(&exact, &[a], &settings)?.to_f64();
        bernoulli.push((a, e, x));
    }
    let poisson = Poisson { rate: 1.0 };
    let chernoff_poisson = chernoff_bound(&poisson, 3.0, &settings)?.to_f64();
    let superlinear = superlinearity_check(&poisson, &[1.0, 2.0, 4.0, 8.0, 16.0], &settings)?.monotone_increasing;
    Ok(Summary { bernoulli, chernoff_poisson, superlinear })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let s = run_example(100_000)?;
    println!("{:>5} {:>12} {:>12}", "a", "empirical", "exact");
    for (a, e, x) in &s.bernoulli {
        println!("{a:>5} {e:>12.6} {x:>12.6}");
    }
    println!("Chernoff exponent, Poisson(1) at 3: {:.6} (s(3|1) = {:.6})", s.chernoff_poisson, 3.0 * 3f64.ln() - 2.0);
    println!("φ*_|.|(r)/r increasing: {}", s.superlinear);
    Ok(())
}
