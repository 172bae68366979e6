//! The dominating-process bound on `φ^{xy}_{|·|}(s)` against the empirical
//! log-MGF of `|A|_1` for every bridge of the two-state chain.

use markov_ldp::chain::validate_generator;
use markov_ldp::conjugate::{abs_log_mgf, flux_mgf_bound};
use markov_ldp::estimate::sample_bridge_laws;
use markov_ldp::{LawMode, Result};

pub struct Row {
    pub pair: (usize, usize),
    pub s: f64,
    pub empirical: f64,
    pub bound: f64,
}

pub fn run_example(samples: usize) -> Result<Vec<Row>> {
    let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]])?;
    let t0 = 1.0;
    let laws = sample_bridge_laws(&q, t0, LawMode::Flux, samples, 13)?;
    let mut rows = Vec::new();
    for ((x, y), law) in &laws.laws {
        for s in [0.5, 1.0] {
            rows.push(Row { pair: (*x, *y), s, empirical: abs_log_mgf(law.as_ref(), s), bound: flux_mgf_bound(&q, *x, *y, t0, s)? });
        }
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    println!("{:>6} {:>4} {:>10} {:>10}", "pair", "s", "φ_|.|(s)", "bound");
    for r in run_example(100_000)? {
        println!("{:>6} {:>4} {:>10.5} {:>10.5}", format!("{:?}", r.pair), r.s, r.empirical, r.bound);
    }
    Ok(())
}
