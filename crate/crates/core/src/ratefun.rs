//! Exact evaluation of the rate functionals: the entropy kernel `s(a|b)`, the
//! occupation-measure rate, the joint occupation/flux rate, the pair-empirical
//! rate, the conditional Cramér rate and the discrete-time joint rate `I(k, θ)`.
//!
//! Infeasible arguments (unbalanced measures, fluxes charging forbidden pairs)
//! evaluate to [`ExtReal::PosInf`] rather than an error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{GeneratorMatrix, ProbVector, TransitionKernel};
use crate::conjugate::ConjugateOracle;
use crate::error::{Error, Result};
use crate::extended::ExtReal;
use crate::rng::{stream, Domain};

/// Tolerance for balance (`e¹#θ = e²#θ`), divergence-freeness and `k ≪ θ`.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// A probability measure `θ` on ordered state pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeasure {
    n_states: usize,
    weights: Vec<f64>,
}

impl PairMeasure {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSquare { rows: n, cols: rows.first().map_or(0, Vec::len) });
        }
        Self::from_flat(n, rows.concat())
    }

    pub fn from_flat(n_states: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n_states * n_states {
            return Err(Error::DimensionMismatch { expected: n_states * n_states, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbVector("pair weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > FEASIBILITY_TOL {
            return Err(Error::InvalidProbVector(format!("pair weights sum to {sum}")));
        }
        Ok(Self { n_states, weights })
    }

    /// `θ_xy = μ_x P_xy`.
    pub fn from_product(mu: &ProbVector, p: &TransitionKernel) -> Result<Self> {
        let n = p.n_states();
        if mu.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: mu.len() });
        }
        let w = (0..n).flat_map(|x| (0..n).map(move |y| mu[x] * p.prob(x, y))).collect();
        Self::from_flat_unchecked_sum(n, w)
    }

    /// Accepts weights whose total is 1 up to accumulated rounding (1e-10).
    pub(crate) fn from_flat_unchecked_sum(n_states: usize, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidProbVector(format!("pair weights sum to {sum}")));
        }
        Ok(Self { n_states, weights })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights[x * self.n_states + y]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// `(e¹#θ)_x = Σ_y θ_xy`.
    pub fn first_marginal(&self) -> Vec<f64> {
        self.weights.chunks_exact(self.n_states).map(|r| r.iter().sum()).collect()
    }

    /// `(e²#θ)_y = Σ_x θ_xy`.
    pub fn second_marginal(&self) -> Vec<f64> {
        let n = self.n_states;
        (0..n).map(|y| (0..n).map(|x| self.get(x, y)).sum()).collect()
    }

    /// `max_x |(e¹#θ)_x − (e²#θ)_x|`.
    pub fn imbalance(&self) -> f64 {
        self.first_marginal().iter().zip(self.second_marginal()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_balanced(&self) -> bool {
        self.imbalance() < FEASIBILITY_TOL
    }
}

/// One `d`-vector per ordered state pair (`K^n`, or a candidate `k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxField {
    n_states: usize,
    dim: usize,
    vectors: Vec<f64>,
}

impl FluxField {
    pub fn zeros(n_states: usize, dim: usize) -> Self {
        Self { n_states, dim, vectors: vec![0.0; n_states * n_states * dim] }
    }

    pub fn from_flat(n_states: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != n_states * n_states * dim {
            return Err(Error::DimensionMismatch { expected: n_states * n_states * dim, got: vectors.len() });
        }
        Ok(Self { n_states, dim, vectors })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, x: usize, y: usize) -> &[f64] {
        let i = (x * self.n_states + y) * self.dim;
        &self.vectors[i..i + self.dim]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (x * self.n_states + y) * self.dim;
        &mut self.vectors[i..i + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    /// `Σ_{x,y} k^{xy}`.
    pub fn total(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.dim];
        for v in self.vectors.chunks_exact(self.dim) {
            t.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        t
    }
}

/// Nonnegative flux matrix `j` (jumps per unit time on each ordered pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxMatrix {
    n_states: usize,
    entries: Vec<f64>,
}

impl FluxMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSquare { rows: n, cols: rows.first().map_or(0, Vec::len) });
        }
        Self::from_flat(n, rows.concat())
    }

    pub fn from_flat(n_states: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n_states * n_states {
            return Err(Error::DimensionMismatch { expected: n_states * n_states, got: entries.len() });
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("flux entries must be finite and nonnegative".into()));
        }
        Ok(Self { n_states, entries })
    }

    /// `(ρ⊗Q)_xy = ρ_x Q_xy` off the diagonal.
    pub fn product(rho: &ProbVector, q: &GeneratorMatrix) -> Self {
        let n = q.n_states();
        let entries = (0..n).flat_map(|x| (0..n).map(move |y| if x == y { 0.0 } else { rho[x] * q.rate(x, y) })).collect();
        Self { n_states: n, entries }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[x * self.n_states + y]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks_exact(self.n_states).map(<[f64]>::to_vec).collect()
    }
}

/// `s(a|b) = a log(a/b) − a + b`, with `s(0|b) = b` and `s(a|0) = +inf` for `a > 0`.
pub fn rel_entropy(a: f64, b: f64) -> Result<ExtReal> {
    if a < 0.0 || b < 0.0 || a.is_nan() || b.is_nan() {
        return Err(Error::NegativeInput { a, b });
    }
    Ok(if a == 0.0 {
        ExtReal::Finite(b)
    } else if b == 0.0 {
        ExtReal::PosInf
    } else {
        ExtReal::Finite(a * (a / b).ln() - a + b)
    })
}

/// Net outflow minus inflow per state, `e¹#j − e²#j`.
pub fn divergence(j: &FluxMatrix) -> Vec<f64> {
    let n = j.n_states();
    (0..n).map(|x| (0..n).map(|y| j.get(x, y) - j.get(y, x)).sum()).collect()
}

/// Joint occupation/flux rate: `Σ_{x≠y} s(j_xy | ρ_x Q_xy)` on divergence-free
/// `j ≪ ρ⊗Q`, `+inf` elsewhere.
pub fn bfg_rate(rho: &ProbVector, j: &FluxMatrix, q: &GeneratorMatrix) -> ExtReal {
    let n = q.n_states();
    if rho.len() != n || j.n_states() != n {
        return ExtReal::PosInf;
    }
    if divergence(j).iter().any(|d| d.abs() >= FEASIBILITY_TOL) {
        return ExtReal::PosInf;
    }
    let mut total = ExtReal::ZERO;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                if j.get(x, x) != 0.0 {
                    return ExtReal::PosInf;
                }
                continue;
            }
            // arguments are nonnegative by construction of the types
            total = total + rel_entropy(j.get(x, y), rho[x] * q.rate(x, y)).unwrap_or(ExtReal::PosInf);
        }
    }
    total
}

/// Rate of the pair-empirical measure of a discrete-time chain:
/// `Σ s(θ_xy | (e¹#θ)_x P_xy)` on balanced `θ`, `+inf` otherwise.
pub fn pair_empirical_rate(theta: &PairMeasure, p: &TransitionKernel) -> ExtReal {
    let n = p.n_states();
    if theta.n_states() != n || !theta.is_balanced() {
        return ExtReal::PosInf;
    }
    let marg = theta.first_marginal();
    (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .map(|(x, y)| rel_entropy(theta.get(x, y), marg[x] * p.prob(x, y)).unwrap_or(ExtReal::PosInf))
        .sum()
}

/// Conditional Cramér rate `Σ θ_xy φ^{xy*}(k^{xy}/θ_xy)` with `0·φ*(0/0) = 0`;
/// `+inf` unless `k ≪ θ`.
pub fn cond_rate(k: &FluxField, theta: &PairMeasure, oracle: &ConjugateOracle) -> Result<ExtReal> {
    let n = theta.n_states();
    if k.n_states() != n || oracle.n_states() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.n_states().min(oracle.n_states()) });
    }
    if k.dim() != oracle.dim() {
        return Err(Error::DimensionMismatch { expected: oracle.dim(), got: k.dim() });
    }
    let mut total = ExtReal::ZERO;
    for x in 0..n {
        for y in 0..n {
            let w = theta.get(x, y);
            let kxy = k.get(x, y);
            if w == 0.0 {
                if kxy.iter().any(|v| v.abs() > FEASIBILITY_TOL) {
                    return Ok(ExtReal::PosInf);
                }
                continue;
            }
            let scaled: Vec<f64> = kxy.iter().map(|v| v / w).collect();
            let c = oracle
                .conjugate(x, y, &scaled)
                .ok_or_else(|| Error::InvalidArgument(format!("no conditional law for pair ({x}, {y})")))??;
            total = total + c.scale(w);
            if total.is_infinite() {
                return Ok(total);
            }
        }
    }
    Ok(total)
}

/// Discrete-time joint rate `I(k, θ)` = conditional Cramér rate + pair-empirical rate.
pub fn theorem_rate(k: &FluxField, theta: &PairMeasure, p: &TransitionKernel, oracle: &ConjugateOracle) -> Result<ExtReal> {
    let entropy = pair_empirical_rate(theta, p);
    if entropy.is_infinite() {
        return Ok(ExtReal::PosInf);
    }
    Ok(cond_rate(k, theta, oracle)? + entropy)
}

/// Solver settings for the occupation-measure variational problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvgSettings {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Random starts in addition to `v = 0`.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for DvgSettings {
    fn default() -> Self {
        Self { grad_tol: 1e-10, max_iter: 100_000, random_starts: 4, seed: 0x5eed }
    }
}

/// Optimal value and potential of the occupation-measure variational formula.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DvgRate {
    pub value: f64,
    /// Maximizing `v = log u`, gauge-fixed to zero at the first charged state;
    /// `-inf` on states with `ρ_x = 0`.
    #[serde(skip)]
    pub potential: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Objective `−Σ_x ρ_x (Qu)_x / u_x` at `u = exp(v)`.
pub fn dvg_objective(rho: &ProbVector, q: &GeneratorMatrix, v: &[f64]) -> f64 {
    let n = q.n_states();
    let mut total = 0.0;
    for x in 0..n {
        if rho[x] == 0.0 {
            continue;
        }
        for y in 0..n {
            if x != y && q.rate(x, y) > 0.0 {
                let e = if v[y] == f64::NEG_INFINITY { 0.0 } else { (v[y] - v[x]).exp() };
                total -= rho[x] * q.rate(x, y) * (e - 1.0);
            }
        }
    }
    total
}

/// Gradient of [`dvg_objective`]: outflow minus inflow of `j_xy = ρ_x Q_xy e^{v_y − v_x}`.
fn dvg_gradient(rho: &ProbVector, q: &GeneratorMatrix, support: &[usize], v: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; v.len()];
    for &x in support {
        for &y in support {
            if x != y {
                let j = rho[x] * q.rate(x, y) * (v[y] - v[x]).exp();
                g[x] += j;
                g[y] -= j;
            }
        }
    }
    g
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Occupation-measure rate `sup_{u>0} −Σ_x ρ_x (Qu)_x/u_x`.
///
/// Works in `v = log u` with `v` pinned to zero at the first charged state.
/// States with `ρ_x = 0` are sent to `v = −inf`, which contributes the exact
/// escape term `Σ ρ_x Q_xy` for jumps into them. The remaining concave problem
/// is solved by gradient ascent (Barzilai–Borwein steps, Armijo backtracking)
/// from `v = 0` and several random starts; the best run is returned.
pub fn dvg_rate(rho: &ProbVector, q: &GeneratorMatrix) -> Result<DvgRate> {
    dvg_rate_with(rho, q, &DvgSettings::default())
}

pub fn dvg_rate_with(rho: &ProbVector, q: &GeneratorMatrix, settings: &DvgSettings) -> Result<DvgRate> {
    let n = q.n_states();
    if rho.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rho.len() });
    }
    if !crate::chain::is_irreducible(q) {
        return Err(Error::Reducible);
    }
    let support: Vec<usize> = (0..n).filter(|&x| rho[x] > 0.0).collect();
    let gauge = support[0];
    let free: Vec<usize> = support.iter().copied().filter(|&x| x != gauge).collect();

    let mut starts = vec![vec![0.0; free.len()]];
    let mut rng = stream(settings.seed, Domain::MultiStart, 0, 0);
    for _ in 0..settings.random_starts {
        starts.push(free.iter().map(|_| rng.random_range(-2.0..2.0)).collect());
    }

    let embed = |w: &[f64]| {
        let mut v = vec![f64::NEG_INFINITY; n];
        v[gauge] = 0.0;
        for (i, &x) in free.iter().enumerate() {
            v[x] = w[i];
        }
        v
    };
    let objective = |w: &[f64]| dvg_objective(rho, q, &embed(w));
    let gradient = |w: &[f64]| {
        let g = dvg_gradient(rho, q, &support, &embed(w));
        free.iter().map(|&x| g[x]).collect::<Vec<f64>>()
    };

    let mut best: Option<DvgRate> = None;
    let mut failure = None;
    for start in starts {
        match gradient_ascent(&objective, &gradient, start, settings) {
            Ok((w, value, grad_norm, iterations)) => {
                if best.as_ref().is_none_or(|b| value > b.value) {
                    best = Some(DvgRate { value, potential: embed(&w), grad_norm, iterations });
                }
            }
            Err(e) => failure = Some(e),
        }
    }
    match (best, failure) {
        (Some(mut b), _) => {
            b.value = b.value.max(0.0);
            Ok(b)
        }
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one start"),
    }
}

type AscentOutcome = (Vec<f64>, f64, f64, usize);

fn gradient_ascent(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    mut w: Vec<f64>,
    settings: &DvgSettings,
) -> Result<AscentOutcome> {
    let mut value = f(&w);
    let mut g = grad(&w);
    if w.is_empty() {
        return Ok((w, value, 0.0, 0));
    }
    let mut step = 1.0;
    for it in 0..settings.max_iter {
        let gn = sup_norm(&g);
        if gn <= settings.grad_tol {
            return Ok((w, value, gn, it));
        }
        let g_sq: f64 = g.iter().map(|x| x * x).sum();
        let mut t = step;
        let (next, next_value) = loop {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            let v = f(&cand);
            if v.is_finite() && v >= value + 1e-4 * t * g_sq {
                break (cand, v);
            }
            // below round-off in the value, progress is judged by the gradient
            if v.is_finite() && t * g_sq < 1e-14 * value.abs().max(1.0) && sup_norm(&grad(&cand)) < gn {
                break (cand, v);
            }
            t *= 0.5;
            if t < 1e-300 {
                return Err(Error::NonConvergence { iterations: it, residual: gn, best_value: value });
            }
        };
        let next_g = grad(&next);
        // Barzilai–Borwein step for the next iteration
        let s: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_g.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e8) } else { (2.0 * t).min(1e8) };
        w = next;
        value = next_value;
        g = next_g;
    }
    Err(Error::NonConvergence { iterations: settings.max_iter, residual: sup_norm(&g), best_value: value })
}
