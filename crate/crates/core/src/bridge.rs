//! Markov bridges: the chain conditioned on `X(0) = x, X(T0) = y`.
//!
//! The conditioned process is a time-inhomogeneous chain (Doob h-transform with
//! `h(t, a) = P_ay(T0 − t)`). Kernels and generator are evaluated in closed
//! form from `exp(tQ)`; exact samples come from rejection on the endpoint.

use rand::Rng;
use rayon::prelude::*;

use crate::chain::{transition_at, GeneratorMatrix};
use crate::conjugate::EmpiricalLaw;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::simulate::{window_observable, LawMode, Simulator};

pub use crate::simulate::PathRecord;

/// Default cap on rejection attempts per bridge sample.
pub const DEFAULT_REJECTION_BUDGET: u64 = 1_000_000;

/// A bridge `x → y` over `[0, T0]` of the chain with generator `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSpec {
    q: GeneratorMatrix,
    x: usize,
    y: usize,
    t0: f64,
    /// `P_xy(T0)`, the rejection acceptance probability.
    endpoint_prob: f64,
}

impl BridgeSpec {
    pub fn new(q: GeneratorMatrix, x: usize, y: usize, t0: f64) -> Result<Self> {
        let n = q.n_states();
        for s in [x, y] {
            if s >= n {
                return Err(Error::StateOutOfRange { state: s, n_states: n });
            }
        }
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("bridge horizon must be positive, got {t0}")));
        }
        let endpoint_prob = transition_at(&q, t0)?.prob(x, y);
        if endpoint_prob <= 0.0 {
            return Err(Error::DegenerateDenominator { from: x, to: y, horizon: t0 });
        }
        Ok(Self { q, x, y, t0, endpoint_prob })
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.q
    }

    pub fn start(&self) -> usize {
        self.x
    }

    pub fn end(&self) -> usize {
        self.y
    }

    pub fn horizon(&self) -> f64 {
        self.t0
    }

    /// `P_xy(T0)`.
    pub fn endpoint_prob(&self) -> f64 {
        self.endpoint_prob
    }
}

fn check_state(spec: &BridgeSpec, s: usize) -> Result<()> {
    let n = spec.q.n_states();
    if s >= n {
        return Err(Error::StateOutOfRange { state: s, n_states: n });
    }
    Ok(())
}

/// `P^{xy}_ab(s, t) = P_ab(t − s) P_by(T0 − t) / P_ay(T0 − s)` for `0 ≤ s ≤ t < T0`.
pub fn bridge_transition(spec: &BridgeSpec, a: usize, b: usize, s: f64, t: f64) -> Result<f64> {
    check_state(spec, a)?;
    check_state(spec, b)?;
    if !(0.0 <= s && s <= t && t < spec.t0) {
        return Err(Error::InvalidArgument(format!("need 0 <= s <= t < T0, got s={s}, t={t}, T0={}", spec.t0)));
    }
    let y = spec.y;
    let denom = transition_at(&spec.q, spec.t0 - s)?.prob(a, y);
    if denom <= 0.0 {
        return Err(Error::DegenerateDenominator { from: a, to: y, horizon: spec.t0 - s });
    }
    let forward = transition_at(&spec.q, t - s)?.prob(a, b);
    let remaining = transition_at(&spec.q, spec.t0 - t)?.prob(b, y);
    Ok(forward * remaining / denom)
}

/// Bridge jump rate `Q^{xy}_ab(t) = Q_ab P_by(T0 − t) / P_ay(T0 − t)`, `a ≠ b`, `0 ≤ t < T0`.
pub fn bridge_generator(spec: &BridgeSpec, a: usize, b: usize, t: f64) -> Result<f64> {
    check_state(spec, a)?;
    check_state(spec, b)?;
    if a == b {
        return Err(Error::InvalidArgument("bridge generator is evaluated off the diagonal".into()));
    }
    if !(0.0 <= t && t < spec.t0) {
        return Err(Error::InvalidArgument(format!("need 0 <= t < T0, got t={t}, T0={}", spec.t0)));
    }
    let p = transition_at(&spec.q, spec.t0 - t)?;
    let denom = p.prob(a, spec.y);
    if denom <= 0.0 {
        return Err(Error::DegenerateDenominator { from: a, to: spec.y, horizon: spec.t0 - t });
    }
    Ok(spec.q.rate(a, b) * p.prob(b, spec.y) / denom)
}

/// An accepted bridge path and the number of unconditioned paths it took.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeDraw {
    pub path: PathRecord,
    pub attempts: u64,
}

/// Rejection sampler for one bridge; reusable across draws.
#[derive(Debug, Clone)]
pub struct BridgeSampler {
    spec: BridgeSpec,
    sim: Simulator,
    budget: u64,
}

impl BridgeSampler {
    pub fn new(spec: BridgeSpec) -> Self {
        let sim = Simulator::new(&spec.q);
        Self { spec, sim, budget: DEFAULT_REJECTION_BUDGET }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn spec(&self) -> &BridgeSpec {
        &self.spec
    }

    /// Simulates unconditioned paths from `x` on `[0, T0]` until one ends in `y`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BridgeDraw> {
        for attempt in 1..=self.budget {
            let path = self.sim.path(self.spec.x, self.spec.t0, rng)?;
            if path.final_state() == self.spec.y {
                return Ok(BridgeDraw { path, attempts: attempt });
            }
        }
        Err(Error::RejectionBudgetExceeded { budget: self.budget })
    }
}

/// One exact draw from the bridge law.
pub fn sample_bridge<R: Rng + ?Sized>(spec: &BridgeSpec, rng: &mut R) -> Result<PathRecord> {
    BridgeSampler::new(spec.clone()).draw(rng).map(|d| d.path)
}

/// Index of the ordered pair `(x, y)` used to derive sampling streams.
pub fn pair_index(n_states: usize, x: usize, y: usize) -> u64 {
    (x * n_states + y) as u64
}

/// `N` i.i.d. bridge paths reduced to window observables: occupation fractions
/// (`d = n`) or occupation followed by flux counts over `T0` (`d = n + n²`).
///
/// Sample `i` uses the stream `(seed, pair, i)`, so the result depends only on
/// `(seed, spec, mode, N)` and not on the thread count.
pub fn conditional_samples(spec: &BridgeSpec, mode: LawMode, count: usize, seed: u64) -> Result<EmpiricalLaw> {
    conditional_samples_with(&BridgeSampler::new(spec.clone()), mode, count, seed)
}

pub fn conditional_samples_with(sampler: &BridgeSampler, mode: LawMode, count: usize, seed: u64) -> Result<EmpiricalLaw> {
    if count == 0 {
        return Err(Error::EmptyLaw);
    }
    let spec = sampler.spec();
    let lane = pair_index(spec.q.n_states(), spec.x, spec.y);
    let rows: Vec<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Domain::Bridge, lane, i);
            let draw = sampler.draw(&mut rng)?;
            Ok(window_observable(&draw.path, 0.0, spec.t0, mode))
        })
        .collect::<Result<_>>()?;
    EmpiricalLaw::new(mode.dim(spec.q.n_states()), rows.concat())
}

/// File name of a cached sample dump for one endpoint pair.
pub fn sample_dump_name(x: usize, y: usize, mode: LawMode, t0: f64, seed: u64, count: usize) -> String {
    format!("pair-{x}-{y}_{}_T0-{t0}_seed-{seed}_N-{count}.bin", mode.name())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::validate_generator;
    use approx::assert_abs_diff_eq;

    fn sym2() -> GeneratorMatrix {
        validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap()
    }

    fn three() -> GeneratorMatrix {
        GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1.0, 2.0], vec![0.5, 0.0, 1.0], vec![3.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn kernel_rows_are_normalized() {
        let spec = BridgeSpec::new(three(), 0, 2, 1.5).unwrap();
        for a in 0..3 {
            for (s, t) in [(0.0, 0.3), (0.2, 1.0), (0.5, 1.49)] {
                let row: f64 = (0..3).map(|b| bridge_transition(&spec, a, b, s, t).unwrap()).sum();
                assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_midpoint() {
        let spec = BridgeSpec::new(sym2(), 0, 1, 0.5).unwrap();
        for b in 0..2 {
            assert_abs_diff_eq!(bridge_transition(&spec, 0, b, 0.0, 0.25).unwrap(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn endpoint_pinning() {
        let spec = BridgeSpec::new(three(), 1, 2, 1.0).unwrap();
        for a in 0..3 {
            let p = bridge_transition(&spec, a, 2, 0.1, 1.0 - 1e-7).unwrap();
            assert!(p > 1.0 - 1e-5);
        }
    }

    #[test]
    fn generator_examples() {
        let spec = BridgeSpec::new(sym2(), 0, 1, 0.5).unwrap();
        let p22 = (1.0 + (-1.0f64).exp()) / 2.0;
        let r = bridge_generator(&spec, 0, 1, 0.0).unwrap();
        assert_abs_diff_eq!(r, p22 / (1.0 - p22), epsilon = 1e-12);
        assert_abs_diff_eq!(r, 2.1640, epsilon = 1e-4);

        // rate into y blows up as t -> T0
        let near: Vec<f64> = [1e-2, 1e-4, 1e-6].iter().map(|h| bridge_generator(&spec, 0, 1, 0.5 - h).unwrap()).collect();
        assert!(near[0] < near[1] && near[1] < near[2] && near[2] > 1e5);

        // rate out of y vanishes like Q_yb Q_by h as t -> T0
        let h = 1e-6;
        let out = bridge_generator(&spec, 1, 0, 0.5 - h).unwrap();
        assert_abs_diff_eq!(out / h, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn rejection_paths_respect_endpoints() {
        let spec = BridgeSpec::new(three(), 2, 1, 0.8).unwrap();
        let sampler = BridgeSampler::new(spec);
        for i in 0..500 {
            let d = sampler.draw(&mut stream(9, Domain::Test, 0, i)).unwrap();
            assert_eq!(d.path.initial, 2);
            assert_eq!(d.path.final_state(), 1);
            assert!(d.path.is_valid());
        }
    }

    #[test]
    fn budget_is_enforced() {
        let q = GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1e-9], vec![1.0, 0.0]]).unwrap();
        let spec = BridgeSpec::new(q, 0, 1, 1.0).unwrap();
        let sampler = BridgeSampler::new(spec).with_budget(50);
        assert_eq!(sampler.draw(&mut stream(1, Domain::Test, 0, 0)).unwrap_err(), Error::RejectionBudgetExceeded { budget: 50 });
    }

    #[test]
    fn occupation_samples_lie_on_the_simplex() {
        let spec = BridgeSpec::new(three(), 0, 0, 1.0).unwrap();
        let law = conditional_samples(&spec, LawMode::Occupation, 2000, 3).unwrap();
        for s in law.iter() {
            assert_abs_diff_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let short = BridgeSpec::new(three(), 1, 1, 1e-3).unwrap();
        let law = conditional_samples(&short, LawMode::Occupation, 2000, 3).unwrap();
        assert!(crate::conjugate::LogMgf::mean(&law)[1] > 0.999);
    }

    #[test]
    fn flux_samples_match_jump_counts() {
        let spec = BridgeSpec::new(three(), 0, 2, 1.0).unwrap();
        let sampler = BridgeSampler::new(spec);
        for i in 0..200 {
            let d = sampler.draw(&mut stream(4, Domain::Test, 0, i)).unwrap();
            let a = window_observable(&d.path, 0.0, 1.0, LawMode::Flux);
            let total: f64 = a[3..].iter().sum();
            assert_eq!(total as usize, d.path.n_jumps());
            assert!((0..3).all(|x| a[3 + 4 * x] == 0.0));
        }
    }

    #[test]
    fn samples_are_deterministic() {
        let spec = BridgeSpec::new(three(), 0, 1, 0.7).unwrap();
        let a = conditional_samples(&spec, LawMode::Flux, 500, 42).unwrap();
        let b = conditional_samples(&spec, LawMode::Flux, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = conditional_samples(&spec, LawMode::Flux, 500, 43).unwrap();
        assert_ne!(a, c);
    }
}
