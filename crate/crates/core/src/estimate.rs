//! Numerical identities between the rate functionals: oracles built from
//! bridge samples, the inf-convolution representations of the occupation and
//! flux rates, the contraction from the flux rate to the occupation rate, and
//! Monte Carlo decay-rate fits.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{conditional_samples_with, BridgeSampler, BridgeSpec};
use crate::chain::{invariant_measure, is_irreducible, transition_at, GeneratorMatrix, ProbVector, TransitionKernel};
use crate::conjugate::{boundary_values_diverge, ConjugateOracle, ConjugateSettings, EmpiricalLaw, LogMgf};
use crate::error::{Error, Result};
use crate::extended::ExtReal;
use crate::optim::{maximize_concave_box, BoxSettings, ConcaveObjective};
use crate::ratefun::{bfg_rate, dvg_objective, dvg_rate, FluxField, FluxMatrix, PairMeasure};
use crate::rng::{stream, Domain};
use crate::simulate::{accumulate, discrete_embedding, LawMode, Simulator};

/// Empirical bridge laws for every endpoint pair with `P_xy(T0) > 0`.
#[derive(Debug, Clone)]
pub struct BridgeLaws {
    pub n_states: usize,
    pub mode: LawMode,
    pub t0: f64,
    pub laws: Vec<((usize, usize), Arc<EmpiricalLaw>)>,
}

impl BridgeLaws {
    pub fn dim(&self) -> usize {
        self.mode.dim(self.n_states)
    }

    pub fn oracle(&self) -> ConjugateOracle {
        self.oracle_with(ConjugateSettings::default())
    }

    pub fn oracle_with(&self, settings: ConjugateSettings) -> ConjugateOracle {
        let mut o = ConjugateOracle::new(self.n_states, self.dim()).with_settings(settings);
        for ((x, y), law) in &self.laws {
            o.set_law(*x, *y, law.clone() as Arc<dyn LogMgf>).expect("dimension fixed by mode");
        }
        o
    }
}

/// Draws `count` bridge samples per endpoint pair.
pub fn sample_bridge_laws(q: &GeneratorMatrix, t0: f64, mode: LawMode, count: usize, seed: u64) -> Result<BridgeLaws> {
    sample_bridge_laws_cached(q, t0, mode, count, seed, |_, _| Ok(None), |_, _, _| Ok(()))
}

/// [`sample_bridge_laws`] with a lookup/store hook per pair (used for sample caches).
pub fn sample_bridge_laws_cached(
    q: &GeneratorMatrix,
    t0: f64,
    mode: LawMode,
    count: usize,
    seed: u64,
    load: impl Fn(usize, usize) -> Result<Option<EmpiricalLaw>>,
    store: impl Fn(usize, usize, &EmpiricalLaw) -> Result<()>,
) -> Result<BridgeLaws> {
    if mode == LawMode::Flux {
        if let Some((row, col)) = q.first_zero_rate() {
            return Err(Error::ZeroRate { row, col });
        }
    }
    let n = q.n_states();
    let p = transition_at(q, t0)?;
    let mut laws = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if p.prob(x, y) <= 0.0 {
                continue;
            }
            let law = match load(x, y)? {
                Some(l) => l,
                None => {
                    let sampler = BridgeSampler::new(BridgeSpec::new(q.clone(), x, y, t0)?);
                    let l = conditional_samples_with(&sampler, mode, count, seed)?;
                    store(x, y, &l)?;
                    l
                }
            };
            laws.push(((x, y), Arc::new(law)));
        }
    }
    Ok(BridgeLaws { n_states: n, mode, t0, laws })
}

/// Per-pair conjugate oracle from `N` bridge samples per pair.
pub fn build_oracle(q: &GeneratorMatrix, t0: f64, mode: LawMode, count: usize, seed: u64) -> Result<ConjugateOracle> {
    Ok(sample_bridge_laws(q, t0, mode, count, seed)?.oracle())
}

/// Settings of the inf-convolution solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfConvSettings {
    pub max_iter: usize,
    /// Stop once the objective decreased by less than this over `stall_window` iterations.
    pub stall_tol: f64,
    pub stall_window: usize,
    /// Stop once the projected-gradient step is below this (sup-norm).
    pub stationarity_tol: f64,
    /// Floor applied to pair weights during iteration.
    pub theta_floor: f64,
    /// Weights below this are reported as exact zeros.
    pub zero_threshold: f64,
    /// Starts: the product measure plus `starts − 1` random balanced measures.
    pub starts: usize,
    pub seed: u64,
    pub conjugate: ConjugateSettings,
}

impl Default for InfConvSettings {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            stall_tol: 1e-11,
            stall_window: 50,
            stationarity_tol: 1e-10,
            theta_floor: 1e-12,
            zero_threshold: 1e-10,
            starts: 3,
            seed: 0x1c0,
            conjugate: ConjugateSettings::default(),
        }
    }
}

/// Optimality and feasibility evidence for an inf-convolution solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfConvCertificate {
    /// Objective decrease over the final `stall_window` iterations.
    pub final_decrease: f64,
    /// Sup-norm of the last projected-gradient step.
    pub stationarity: f64,
    /// `max_x |(e¹#θ)_x − (e²#θ)_x|` of the reported `θ`.
    pub balance_residual: f64,
    /// `|Σ k^{xy} − target|_∞`.
    pub target_residual: f64,
    /// Weak-duality lower bound `λ·target − log r(P ∘ e^{φ(λ)})` at the final tilt,
    /// per unit time.
    pub lower_bound: f64,
    /// The dual tilt touched its box at the solution.
    pub boundary: bool,
    /// Values of the window objective for box sizes `Λ, 2Λ, 4Λ` at the solution.
    pub penalty_sweep: Vec<(f64, f64)>,
    pub iterations: usize,
    /// Best value reached from each start, per unit time.
    pub start_values: Vec<f64>,
}

/// Minimizer of the discrete-time rate over all `(k, θ)` with `Σ k = target`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfConvResult {
    /// Rate per unit time: the window objective divided by `T0`.
    pub value: ExtReal,
    /// Minimum of `I(k, θ)` itself (rate per window).
    pub window_value: ExtReal,
    pub theta: PairMeasure,
    pub k: FluxField,
    pub tilt: Vec<f64>,
    pub certificate: InfConvCertificate,
}

impl InfConvResult {
    pub fn is_feasible(&self) -> bool {
        self.value.is_finite()
    }
}

/// `λ ↦ λ·target − Σ_xy θ_xy φ_xy(λ)`.
struct TiltedDual<'a> {
    terms: Vec<(&'a dyn LogMgf, f64)>,
    target: &'a [f64],
}

impl ConcaveObjective for TiltedDual<'_> {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = x.iter().zip(self.target).map(|(a, b)| a * b).sum();
        lin - self.terms.iter().map(|(l, w)| w * l.log_mgf(x)).sum::<f64>()
    }

    fn derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let d = self.target.len();
        let mut value: f64 = x.iter().zip(self.target).map(|(a, b)| a * b).sum();
        let mut grad = self.target.to_vec();
        let mut hess = DMatrix::zeros(d, d);
        for (law, w) in &self.terms {
            let m = law.log_mgf_derivs(x);
            value -= w * m.value;
            grad.iter_mut().zip(&m.grad).for_each(|(g, v)| *g -= w * v);
            hess -= m.hess * *w;
        }
        (value, grad, hess)
    }
}

struct InfConvProblem<'a> {
    oracle: &'a ConjugateOracle,
    p: &'a TransitionKernel,
    target: Vec<f64>,
    /// Pairs carrying weight: `P_xy > 0` and covered by the oracle.
    pairs: Vec<(usize, usize)>,
    projector: BalancedSimplex,
    settings: InfConvSettings,
}

/// Inner dual solve at fixed `θ`.
struct InnerSolve {
    value: f64,
    tilt: Vec<f64>,
    /// `φ_xy(λ̂)` per active pair.
    phi: Vec<f64>,
    boundary: bool,
}

impl<'a> InfConvProblem<'a> {
    fn new(oracle: &'a ConjugateOracle, p: &'a TransitionKernel, target: Vec<f64>, settings: InfConvSettings) -> Result<Self> {
        let n = p.n_states();
        if oracle.n_states() != n {
            return Err(Error::DimensionMismatch { expected: n, got: oracle.n_states() });
        }
        if target.len() != oracle.dim() {
            return Err(Error::DimensionMismatch { expected: oracle.dim(), got: target.len() });
        }
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).filter(|&(x, y)| p.prob(x, y) > 0.0 && oracle.covers(x, y)).collect();
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no endpoint pair carries a conditional law".into()));
        }
        let projector = BalancedSimplex::new(n, &pairs, settings.theta_floor);
        Ok(Self { oracle, p, target, pairs, projector, settings })
    }

    fn law(&self, i: usize) -> &dyn LogMgf {
        let (x, y) = self.pairs[i];
        self.oracle.law(x, y).expect("active pairs are covered")
    }

    fn inner(&self, w: &[f64], warm: &[f64], bound: f64) -> InnerSolve {
        let dual = TiltedDual { terms: (0..self.pairs.len()).map(|i| (self.law(i), w[i])).collect(), target: &self.target };
        let s = BoxSettings { bound, grad_tol: self.settings.conjugate.grad_tol, max_iter: self.settings.conjugate.max_iter };
        let r = maximize_concave_box(&dual, warm, &s);
        let phi = (0..self.pairs.len()).map(|i| self.law(i).log_mgf(&r.x)).collect();
        InnerSolve { value: r.value, tilt: r.x, phi, boundary: r.at_boundary }
    }

    fn first_marginal(&self, w: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.p.n_states()];
        for (i, &(x, _)) in self.pairs.iter().enumerate() {
            m[x] += w[i];
        }
        m
    }

    /// `Σ_xy s(θ_xy | (e¹#θ)_x P_xy)` over all pairs, inactive ones at `θ = 0`.
    fn entropy(&self, w: &[f64]) -> f64 {
        let marg = self.first_marginal(w);
        let n = self.p.n_states();
        let mut total: f64 = (0..n).map(|x| marg[x]).sum::<f64>();
        // Σ_y marg_x P_xy = marg_x; subtract it back pair by pair for charged pairs
        for (i, &(x, y)) in self.pairs.iter().enumerate() {
            let b = marg[x] * self.p.prob(x, y);
            if w[i] > 0.0 {
                total += w[i] * (w[i] / b).ln() - w[i];
            }
        }
        total - (0..n).map(|x| marg[x]).sum::<f64>() + self.p_weighted_mass(&marg)
    }

    fn p_weighted_mass(&self, marg: &[f64]) -> f64 {
        let n = self.p.n_states();
        (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).map(|(x, y)| marg[x] * self.p.prob(x, y)).sum()
    }

    fn entropy_grad(&self, w: &[f64]) -> Vec<f64> {
        let marg = self.first_marginal(w);
        self.pairs.iter().enumerate().map(|(i, &(x, y))| (w[i] / (marg[x] * self.p.prob(x, y))).ln()).collect()
    }

    /// Objective and gradient at `θ`, reusing `warm` as the dual starting point.
    fn objective(&self, w: &[f64], warm: &[f64]) -> (f64, Vec<f64>, InnerSolve) {
        let inner = self.inner(w, warm, self.settings.conjugate.bound);
        let value = inner.value + self.entropy(w);
        let grad = self.entropy_grad(w).iter().zip(&inner.phi).map(|(e, f)| e - f).collect();
        (value, grad, inner)
    }

    fn start_points(&self) -> Vec<Vec<f64>> {
        let n = self.p.n_states();
        let mu = crate::chain::dtmc_invariant(self.p).unwrap_or_else(|_| ProbVector::uniform(n));
        let mut starts = vec![self.projector.project(&self.pairs.iter().map(|&(x, y)| mu[x] * self.p.prob(x, y)).collect::<Vec<_>>())];
        let mut rng = stream(self.settings.seed, Domain::MultiStart, 1, 0);
        for _ in 1..self.settings.starts.max(1) {
            let raw: Vec<f64> = self.pairs.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            starts.push(self.projector.project(&raw.iter().map(|v| v / total).collect::<Vec<_>>()));
        }
        starts
    }

    fn descend(&self, start: Vec<f64>) -> Descent {
        let s = &self.settings;
        let mut w = start;
        let mut warm = vec![0.0; self.target.len()];
        let (mut f, mut g, mut inner) = self.objective(&w, &warm);
        let mut history = vec![f];
        let mut alpha = 1.0;
        let mut stationarity = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < s.max_iter {
            iterations += 1;
            warm.clone_from(&inner.tilt);
            let mut step = alpha;
            let mut accepted = None;
            for _ in 0..80 {
                let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let cand = self.projector.project(&trial);
                let delta: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
                let lin: f64 = delta.iter().zip(&g).map(|(a, b)| a * b).sum();
                let sq: f64 = delta.iter().map(|a| a * a).sum();
                if sq == 0.0 {
                    accepted = Some((cand, f, g.clone(), None, 0.0));
                    break;
                }
                let (fc, gc, ic) = self.objective(&cand, &warm);
                // nonmonotone reference keeps Barzilai–Borwein steps acceptable
                let reference = history.iter().rev().take(10).fold(f, |m, v| m.max(*v));
                if fc <= reference.min(f + 1e-3 * f.abs().max(1.0)) + lin + sq / (2.0 * step) + 1e-15 * f.abs().max(1.0) {
                    accepted = Some((cand, fc, gc, Some(ic), step));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, fc, gc, ic, used)) = accepted else { break };
            stationarity = cand.iter().zip(&w).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())) / used.max(f64::MIN_POSITIVE);
            if ic.is_none() {
                stationarity = 0.0;
                converged = true;
                break;
            }
            // Barzilai–Borwein step for the next iteration
            let sv: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = sv.iter().zip(&yv).map(|(a, b)| a * b).sum();
            let ss: f64 = sv.iter().map(|a| a * a).sum();
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { (2.0 * used).min(1e6) };
            w = cand;
            f = fc;
            g = gc;
            inner = ic.expect("checked above");
            history.push(f);
            if stationarity <= s.stationarity_tol {
                converged = true;
                break;
            }
            if history.len() > s.stall_window {
                let past = history[history.len() - 1 - s.stall_window];
                if past - f < s.stall_tol {
                    converged = true;
                    break;
                }
            }
        }
        let final_decrease = if history.len() > s.stall_window { history[history.len() - 1 - s.stall_window] - f } else { history[0] - f };
        Descent { w, value: f, inner, iterations, converged, stationarity, final_decrease }
    }

    /// `λ·target − log r(P ∘ e^{φ(λ)})`, a lower bound on the window objective.
    fn lower_bound(&self, tilt: &[f64]) -> f64 {
        let n = self.p.n_states();
        let phis: Vec<f64> = (0..self.pairs.len()).map(|i| self.law(i).log_mgf(tilt)).collect();
        let top = phis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (i, &(x, y)) in self.pairs.iter().enumerate() {
            m[(x, y)] = self.p.prob(x, y) * (phis[i] - top).exp();
        }
        let lin: f64 = tilt.iter().zip(&self.target).map(|(a, b)| a * b).sum();
        lin - top - perron_root(&m).ln()
    }
}

struct Descent {
    w: Vec<f64>,
    value: f64,
    inner: InnerSolve,
    iterations: usize,
    converged: bool,
    stationarity: f64,
    final_decrease: f64,
}

/// Spectral radius of a nonnegative matrix.
fn perron_root(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0_f64, |r, z| r.max(z.norm()))
}

/// Euclidean projection onto `{θ ≥ floor, Σθ = 1, e¹#θ = e²#θ}` restricted to a
/// set of active pairs, by Dykstra's alternating projections between the affine
/// constraints and the box.
#[derive(Debug, Clone)]
struct BalancedSimplex {
    /// `A^T (A A^T)^+`.
    correction: DMatrix<f64>,
    constraints: DMatrix<f64>,
    rhs: DVector<f64>,
    floor: f64,
}

impl BalancedSimplex {
    fn new(n: usize, pairs: &[(usize, usize)], floor: f64) -> Self {
        let m = pairs.len();
        let mut a = DMatrix::<f64>::zeros(n + 1, m);
        for (i, &(x, y)) in pairs.iter().enumerate() {
            a[(0, i)] = 1.0;
            a[(1 + x, i)] += 1.0;
            a[(1 + y, i)] -= 1.0;
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs[0] = 1.0;
        let gram = &a * a.transpose();
        let pinv = gram.pseudo_inverse(1e-12).expect("pseudo-inverse of a small Gram matrix");
        let correction = a.transpose() * pinv;
        Self { correction, constraints: a, rhs, floor }
    }

    fn affine(&self, v: &DVector<f64>) -> DVector<f64> {
        let resid = &self.constraints * v - &self.rhs;
        v - &self.correction * resid
    }

    fn project(&self, point: &[f64]) -> Vec<f64> {
        let mut x = DVector::from_column_slice(point);
        let mut p = DVector::zeros(x.len());
        let mut q = DVector::zeros(x.len());
        for _ in 0..20_000 {
            let y = self.affine(&(&x + &p));
            p = &x + &p - &y;
            let prev = x.clone();
            x = (&y + &q).map(|v| v.max(self.floor));
            q = &y + &q - &x;
            if (&x - &prev).amax() < 1e-16 && (&x - &y).amax() < 1e-15 {
                break;
            }
        }
        let out = self.affine(&x);
        out.iter().map(|v| v.max(0.0)).collect()
    }
}

/// Solves `inf { I(k, θ) : θ balanced, Σ k^{xy} = target }`.
pub fn infconv(
    target: &[f64],
    oracle: &ConjugateOracle,
    p: &TransitionKernel,
    t0: f64,
    settings: &InfConvSettings,
) -> Result<InfConvResult> {
    infconv_from(target, oracle, p, t0, settings, None)
}

/// [`infconv`] started only from `start` (e.g. a previous minimizer) instead of
/// the default multi-start set.
pub fn infconv_restart(
    target: &[f64],
    oracle: &ConjugateOracle,
    p: &TransitionKernel,
    t0: f64,
    settings: &InfConvSettings,
    start: &PairMeasure,
) -> Result<InfConvResult> {
    infconv_from(target, oracle, p, t0, settings, Some(start))
}

fn infconv_from(
    target: &[f64],
    oracle: &ConjugateOracle,
    p: &TransitionKernel,
    t0: f64,
    settings: &InfConvSettings,
    start: Option<&PairMeasure>,
) -> Result<InfConvResult> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidArgument(format!("T0 must be positive, got {t0}")));
    }
    let problem = InfConvProblem::new(oracle, p, target.to_vec(), *settings)?;
    let starts = match start {
        Some(theta) => vec![problem.projector.project(&problem.pairs.iter().map(|&(x, y)| theta.get(x, y)).collect::<Vec<_>>())],
        None => problem.start_points(),
    };
    let mut runs: Vec<Descent> = starts.into_iter().map(|s| problem.descend(s)).collect();
    let start_values: Vec<f64> = runs.iter().map(|r| r.value / t0).collect();
    runs.sort_by(|a, b| a.value.total_cmp(&b.value));
    let best = runs.swap_remove(0);
    if !best.converged {
        return Err(Error::NonConvergence { iterations: best.iterations, residual: best.stationarity, best_value: best.value / t0 });
    }

    let n = p.n_states();
    let d = target.len();
    let bound = settings.conjugate.bound;
    let entropy = problem.entropy(&best.w);
    let mut sweep = vec![(bound, best.value)];
    let mut infeasible = false;
    if best.inner.boundary {
        let wider: Vec<InnerSolve> = [2.0, 4.0].iter().map(|k| problem.inner(&best.w, &best.inner.tilt, k * bound)).collect();
        sweep.push((2.0 * bound, wider[0].value + entropy));
        sweep.push((4.0 * bound, wider[1].value + entropy));
        infeasible = wider.iter().all(|w| w.boundary) && boundary_values_diverge(sweep[0].1, sweep[1].1, sweep[2].1);
    }

    let mut theta = vec![0.0; n * n];
    let mut k = FluxField::zeros(n, d);
    for (i, &(x, y)) in problem.pairs.iter().enumerate() {
        if best.w[i] < settings.zero_threshold {
            continue;
        }
        theta[x * n + y] = best.w[i];
        let grad = problem.law(i).log_mgf_derivs(&best.inner.tilt).grad;
        k.get_mut(x, y).iter_mut().zip(grad).for_each(|(kv, gv)| *kv = best.w[i] * gv);
    }
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|v| *v /= total);
    let theta = PairMeasure::from_flat_unchecked_sum(n, theta)?;
    let target_residual = k.total().iter().zip(target).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let window_value = if infeasible { ExtReal::PosInf } else { ExtReal::Finite(best.value.max(0.0)) };
    Ok(InfConvResult {
        value: if infeasible { ExtReal::PosInf } else { ExtReal::Finite(best.value.max(0.0) / t0) },
        window_value,
        certificate: InfConvCertificate {
            final_decrease: best.final_decrease,
            stationarity: best.stationarity,
            balance_residual: theta.imbalance(),
            target_residual,
            lower_bound: problem.lower_bound(&best.inner.tilt) / t0,
            boundary: best.inner.boundary,
            penalty_sweep: sweep,
            iterations: best.iterations,
            start_values,
        },
        theta,
        k,
        tilt: best.inner.tilt,
    })
}

/// Lower bound `(λ·target − log r(P ∘ e^{φ(λ)})) / T0` on the inf-convolution,
/// valid for every tilt `λ`; `r` is the spectral radius. Equality holds at the
/// optimal tilt.
pub fn dual_lower_bound(target: &[f64], oracle: &ConjugateOracle, p: &TransitionKernel, t0: f64, tilt: &[f64]) -> Result<f64> {
    if tilt.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), got: tilt.len() });
    }
    let problem = InfConvProblem::new(oracle, p, target.to_vec(), InfConvSettings::default())?;
    Ok(problem.lower_bound(tilt) / t0)
}

/// Occupation rate as an inf-convolution of the discrete-time rate, with
/// target `Σ k^{xy} = ρ` and an occupation-mode oracle.
pub fn infconv_dvg(rho: &ProbVector, oracle: &ConjugateOracle, p: &TransitionKernel, t0: f64) -> Result<InfConvResult> {
    infconv_dvg_with(rho, oracle, p, t0, &InfConvSettings::default())
}

pub fn infconv_dvg_with(
    rho: &ProbVector,
    oracle: &ConjugateOracle,
    p: &TransitionKernel,
    t0: f64,
    settings: &InfConvSettings,
) -> Result<InfConvResult> {
    if oracle.dim() != LawMode::Occupation.dim(p.n_states()) {
        return Err(Error::InvalidArgument("occupation inf-convolution needs an occupation-mode oracle".into()));
    }
    infconv(rho.as_slice(), oracle, p, t0, settings)
}

/// Joint occupation/flux rate as an inf-convolution with target `Σ k^{xy} = (ρ, j)`.
pub fn infconv_bfg(rho: &ProbVector, j: &FluxMatrix, oracle: &ConjugateOracle, p: &TransitionKernel, t0: f64) -> Result<InfConvResult> {
    infconv_bfg_with(rho, j, oracle, p, t0, &InfConvSettings::default())
}

pub fn infconv_bfg_with(
    rho: &ProbVector,
    j: &FluxMatrix,
    oracle: &ConjugateOracle,
    p: &TransitionKernel,
    t0: f64,
    settings: &InfConvSettings,
) -> Result<InfConvResult> {
    if oracle.dim() != LawMode::Flux.dim(p.n_states()) {
        return Err(Error::InvalidArgument("flux inf-convolution needs a flux-mode oracle".into()));
    }
    let mut target = rho.as_slice().to_vec();
    target.extend_from_slice(j.as_slice());
    infconv(&target, oracle, p, t0, settings)
}

/// Primal/dual pair from contracting the flux rate to the occupation rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionResult {
    /// `I_BFG(ρ, j*)` at the recovered optimal flux.
    pub value: f64,
    /// Dual objective at the optimal potential.
    pub dual_value: f64,
    pub gap: f64,
    pub flux: FluxMatrix,
}

struct PotentialDual<'a> {
    rho: &'a ProbVector,
    q: &'a GeneratorMatrix,
    support: Vec<usize>,
    gauge: usize,
    free: Vec<usize>,
}

impl PotentialDual<'_> {
    fn embed(&self, w: &[f64]) -> Vec<f64> {
        let mut v = vec![f64::NEG_INFINITY; self.q.n_states()];
        v[self.gauge] = 0.0;
        for (i, &x) in self.free.iter().enumerate() {
            v[x] = w[i];
        }
        v
    }

    /// `j_xy = ρ_x Q_xy e^{v_y − v_x}` on the support of `ρ`, zero elsewhere.
    fn flux(&self, v: &[f64]) -> FluxMatrix {
        let n = self.q.n_states();
        let mut e = vec![0.0; n * n];
        for &x in &self.support {
            for &y in &self.support {
                if x != y {
                    e[x * n + y] = self.rho[x] * self.q.rate(x, y) * (v[y] - v[x]).exp();
                }
            }
        }
        FluxMatrix::from_flat(n, e).expect("nonnegative")
    }
}

impl ConcaveObjective for PotentialDual<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        dvg_objective(self.rho, self.q, &self.embed(w))
    }

    fn derivatives(&self, w: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let v = self.embed(w);
        let j = self.flux(&v);
        let n = self.q.n_states();
        let mut g = vec![0.0; n];
        let mut h = DMatrix::<f64>::zeros(n, n);
        for &x in &self.support {
            for &y in &self.support {
                if x != y {
                    let e = j.get(x, y);
                    g[x] += e;
                    g[y] -= e;
                    h[(x, x)] -= e;
                    h[(y, y)] -= e;
                    h[(x, y)] += e;
                    h[(y, x)] += e;
                }
            }
        }
        let m = self.free.len();
        let grad = self.free.iter().map(|&x| g[x]).collect();
        let hess = DMatrix::from_fn(m, m, |a, b| h[(self.free[a], self.free[b])]);
        (self.value(w), grad, hess)
    }
}

/// Undamped Newton steps until the divergence stops shrinking; the damped
/// solver halts at round-off in the objective, well before the flux is
/// divergence-free to `FEASIBILITY_TOL`.
fn polish_potential(dual: &PotentialDual<'_>, w: &mut [f64]) {
    let sup = |g: &[f64]| g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (_, mut g, mut h) = dual.derivatives(w);
    for _ in 0..20 {
        let Some(step) = (-h.clone()).cholesky().map(|c| c.solve(&DVector::from_column_slice(&g))) else { return };
        let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let (_, gt, ht) = dual.derivatives(&trial);
        if !(sup(&gt) < sup(&g)) {
            return;
        }
        w.copy_from_slice(&trial);
        (g, h) = (gt, ht);
    }
}

/// Occupation rate via the contraction `inf_j I_BFG(ρ, j)`.
///
/// Maximizes the dual `−Σ_x ρ_x Σ_y Q_xy (e^{v_y − v_x} − 1)` over potentials
/// by Newton's method, then evaluates the flux rate at the optimal flux
/// `j_xy = ρ_x Q_xy e^{v_y − v_x}`, which is divergence-free at the optimum.
/// Fails unless the primal/dual gap is below `1e-6`.
pub fn contract_dvg_from_bfg(rho: &ProbVector, q: &GeneratorMatrix) -> Result<ContractionResult> {
    let n = q.n_states();
    if rho.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rho.len() });
    }
    if !is_irreducible(q) {
        return Err(Error::Reducible);
    }
    let support: Vec<usize> = (0..n).filter(|&x| rho[x] > 0.0).collect();
    let gauge = support[0];
    let free: Vec<usize> = support.iter().copied().filter(|&x| x != gauge).collect();
    let dual = PotentialDual { rho, q, support, gauge, free };
    let settings = BoxSettings { bound: 300.0, grad_tol: 1e-13, max_iter: 500 };
    let mut r = maximize_concave_box(&dual, &vec![0.0; dual.free.len()], &settings);
    polish_potential(&dual, &mut r.x);
    r.value = dual.value(&r.x);
    let v = dual.embed(&r.x);
    let flux = dual.flux(&v);
    let primal = bfg_rate(rho, &flux, q);
    let gap = primal.to_f64() - r.value;
    match primal {
        ExtReal::Finite(value) if !r.at_boundary && gap.abs() < 1e-6 => Ok(ContractionResult { value, dual_value: r.value, gap, flux }),
        _ => Err(Error::NonConvergence {
            iterations: r.iterations,
            residual: r.grad.iter().fold(0.0, |m, g| m.max(g.abs())),
            best_value: r.value,
        }),
    }
}

/// Observable whose decay is measured by [`mc_decay_rate`].
#[derive(Debug, Clone, PartialEq)]
pub enum DecayTarget {
    /// Occupation measure over `[0, n·T0]` near `ρ`.
    Occupation(ProbVector),
    /// `(K^n, Θ^n)` near `(k, θ)`.
    Pair { k: FluxField, theta: PairMeasure, mode: LawMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySettings {
    pub t0: f64,
    /// ℓ¹ radius of the ball around the target.
    pub epsilon: f64,
    pub n_grid: Vec<usize>,
    pub paths_per_n: u64,
    pub seed: u64,
    /// Grid points with fewer hits are excluded from the fit.
    pub min_hits: u64,
}

/// One grid point of a decay fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    pub hits: u64,
    pub paths: u64,
    /// `−(1/n) log P̂`, `None` without hits.
    pub scaled_neg_log_prob: Option<f64>,
    pub usable: bool,
}

/// Weighted least-squares fit of `−log P̂(n) ≈ a + slope · n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub points: Vec<DecayPoint>,
    /// Decay rate per window, clamped at zero.
    pub slope: f64,
    pub raw_slope: f64,
    pub std_error: f64,
    pub intercept: f64,
    pub largest_usable_n: usize,
    pub epsilon: f64,
    pub t0: f64,
}

/// Estimates the exponential decay rate of `P(observable ∈ ball)` in the number of windows.
///
/// For each `n`, `paths_per_n` independent whole-horizon paths started from the
/// invariant measure are simulated on `[0, n·T0]`; path `i` at grid point `g`
/// uses its own stream, so hit counts do not depend on the thread count.
pub fn mc_decay_rate(q: &GeneratorMatrix, target: &DecayTarget, settings: &DecaySettings) -> Result<DecayFit> {
    if !(settings.epsilon > 0.0) || !(settings.t0 > 0.0) || settings.paths_per_n == 0 {
        return Err(Error::InvalidArgument("epsilon, T0 and the path count must be positive".into()));
    }
    let pi = invariant_measure(q)?;
    let sim = Simulator::new(q);
    let n_states = q.n_states();
    let cumulative: Vec<f64> = pi
        .as_slice()
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let mut points = Vec::with_capacity(settings.n_grid.len());
    for (g, &n) in settings.n_grid.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidArgument("window counts must be positive".into()));
        }
        let horizon = n as f64 * settings.t0;
        let hits: u64 = (0..settings.paths_per_n)
            .into_par_iter()
            .map(|i| -> Result<u64> {
                let mut rng = stream(settings.seed, Domain::Decay, g as u64, i);
                let u: f64 = rng.random();
                let x0 = cumulative.iter().position(|c| u < *c).unwrap_or(n_states - 1);
                let hit = match target {
                    DecayTarget::Occupation(rho) => {
                        let (occ, _) = sim.occupation_run(x0, horizon, &mut rng)?;
                        occ.iter().zip(rho.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>() <= settings.epsilon
                    }
                    DecayTarget::Pair { k, theta, mode } => {
                        let path = sim.path(x0, horizon, &mut rng)?;
                        let acc = accumulate(&discrete_embedding(&path, settings.t0, *mode)?);
                        acc.l1_distance(k, theta) <= settings.epsilon
                    }
                };
                Ok(hit as u64)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        let p_hat = hits as f64 / settings.paths_per_n as f64;
        points.push(DecayPoint {
            n,
            hits,
            paths: settings.paths_per_n,
            scaled_neg_log_prob: (hits > 0).then(|| -p_hat.ln() / n as f64),
            usable: hits >= settings.min_hits,
        });
    }
    fit_decay(points, settings)
}

fn fit_decay(points: Vec<DecayPoint>, settings: &DecaySettings) -> Result<DecayFit> {
    let usable: Vec<&DecayPoint> = points.iter().filter(|p| p.usable).collect();
    let largest_usable = usable.iter().map(|p| p.n).max();
    if usable.len() < 2 {
        return Err(Error::InsufficientHits { min_hits: settings.min_hits, largest_usable });
    }
    let (mut s, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &usable {
        let paths = p.paths as f64;
        let p_hat = p.hits as f64 / paths;
        // delta-method variance of log P̂
        let var = (1.0 - p_hat + 1.0 / paths) / p.hits as f64;
        let w = 1.0 / var;
        let x = p.n as f64;
        let y = -p_hat.ln();
        s += w;
        sx += w * x;
        sxx += w * x * x;
        sy += w * y;
        sxy += w * x * y;
    }
    let det = s * sxx - sx * sx;
    let raw_slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    Ok(DecayFit {
        slope: raw_slope.max(0.0),
        raw_slope,
        std_error: (s / det).sqrt(),
        intercept,
        largest_usable_n: largest_usable.expect("at least two usable points"),
        epsilon: settings.epsilon,
        t0: settings.t0,
        points,
    })
}

/// `min` of the occupation rate over the simplex lattice with spacing
/// `1/resolution` inside the ℓ¹ ball of radius `epsilon` around `center`.
pub fn dvg_inf_over_ball(q: &GeneratorMatrix, center: &ProbVector, epsilon: f64, resolution: usize) -> Result<f64> {
    let n = q.n_states();
    if center.len() != n || resolution == 0 {
        return Err(Error::InvalidArgument("center dimension or resolution invalid".into()));
    }
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; n];
    lattice_walk(&mut counts, 0, resolution, &mut |c| -> Result<()> {
        let rho: Vec<f64> = c.iter().map(|&k| k as f64 / resolution as f64).collect();
        let dist: f64 = rho.iter().zip(center.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        if dist <= epsilon + 1e-12 {
            let v = dvg_rate(&ProbVector::normalized(rho)?, q)?.value;
            best = best.min(v);
        }
        Ok(())
    })?;
    if best.is_infinite() {
        return Err(Error::InvalidArgument("no lattice point inside the ball; raise the resolution".into()));
    }
    Ok(best)
}

fn lattice_walk(counts: &mut [usize], i: usize, left: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    if i == counts.len() - 1 {
        counts[i] = left;
        return f(counts);
    }
    for c in 0..=left {
        counts[i] = c;
        lattice_walk(counts, i + 1, left - c, f)?;
    }
    Ok(())
}
