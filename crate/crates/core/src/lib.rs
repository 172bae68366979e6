//! Large-deviation rate functionals for finite-state Markov chains.
//!
//! The crate evaluates the occupation-measure rate `I_DVG`, the joint
//! occupation/flux rate `I_BFG`, and a discrete-time rate `I(k, θ)` built from
//! the laws of Markov bridges over windows of length `T0`. The estimation layer
//! checks the identities linking them numerically.
//!
//! | module | contents |
//! |---|---|
//! | [`chain`] | generators, `e^{tQ}`, invariant measures, irreducibility |
//! | [`ratefun`] | `s(a|b)`, `I_DVG`, `I_BFG`, pair-empirical and conditional rates |
//! | [`conjugate`] | log-MGFs, Legendre–Fenchel conjugates, tail bounds |
//! | [`bridge`] | bridge kernels and exact bridge sampling |
//! | [`simulate`] | Gillespie paths, fluxes, window embedding, `(K^n, Θ^n)` |
//! | [`estimate`] | inf-convolutions, contraction, Monte Carlo decay fits |
//! | [`cli`] | config-driven batch runs behind the `ldrate` binary |
//!
//! ```
//! use markov_ldp::{chain::validate_generator, chain::ProbVector, ratefun::dvg_rate};
//!
//! let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
//! let rho = ProbVector::new(vec![0.9, 0.1]).unwrap();
//! assert!((dvg_rate(&rho, &q).unwrap().value - 0.4).abs() < 1e-6);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod chain;
pub mod cli;
pub mod conjugate;
pub mod error;
pub mod estimate;
pub mod extended;
mod optim;
pub mod ratefun;
pub mod rng;
pub mod simulate;

pub use chain::{GeneratorMatrix, ProbVector, TransitionKernel};
pub use conjugate::{ConjugateOracle, EmpiricalLaw};
pub use error::{Error, Result};
pub use extended::ExtReal;
pub use ratefun::{FluxField, FluxMatrix, PairMeasure};
pub use simulate::LawMode;
