//! Finite-state chain primitives: generators, transition kernels, invariant
//! measures and irreducibility.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GENERATOR_ROW_TOL: f64 = 1e-12;
const KERNEL_ROW_TOL: f64 = 1e-10;
const PROB_SUM_TOL: f64 = 1e-12;
/// Poisson tail mass below which the uniformization series is truncated.
const UNIFORMIZATION_TAIL: f64 = 1e-14;

/// Rate matrix `Q` of a continuous-time chain: nonnegative off-diagonal jump
/// rates, rows summing to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    rates: DMatrix<f64>,
}

/// Row-stochastic matrix, either a discrete-time chain or `P(t) = exp(tQ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    probs: DMatrix<f64>,
}

/// A probability vector on the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    weights: Vec<f64>,
}

fn square_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::NotSquare { rows: 0, cols: 0 });
    }
    for r in rows {
        if r.len() != n {
            return Err(Error::NotSquare { rows: n, cols: r.len() });
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    for i in 0..n {
        for j in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(m)
}

/// Validates a raw square matrix as a generator.
pub fn validate_generator(raw: &[Vec<f64>]) -> Result<GeneratorMatrix> {
    GeneratorMatrix::from_matrix(square_from_rows(raw)?)
}

impl GeneratorMatrix {
    pub fn from_matrix(rates: DMatrix<f64>) -> Result<Self> {
        if rates.nrows() != rates.ncols() || rates.nrows() == 0 {
            return Err(Error::NotSquare { rows: rates.nrows(), cols: rates.ncols() });
        }
        let n = rates.nrows();
        for i in 0..n {
            for j in 0..n {
                let v = rates[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if i != j && v < 0.0 {
                    return Err(Error::NegativeOffDiagonal { row: i, col: j, value: v });
                }
            }
        }
        for i in 0..n {
            let row = rates.row(i);
            let sum: f64 = row.iter().sum();
            let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if sum.abs() > GENERATOR_ROW_TOL * scale {
                return Err(Error::NonZeroRowSum { row: i, sum, expected: 0.0 });
            }
        }
        Ok(Self { rates })
    }

    /// Builds a generator from off-diagonal rates; the diagonal of `rates` is
    /// ignored and replaced by minus the row sum.
    pub fn from_off_diagonal(rates: &[Vec<f64>]) -> Result<Self> {
        let mut m = square_from_rows(rates)?;
        let n = m.nrows();
        for i in 0..n {
            m[(i, i)] = 0.0;
            let out: f64 = m.row(i).iter().sum();
            m[(i, i)] = -out;
        }
        Self::from_matrix(m)
    }

    pub fn n_states(&self) -> usize {
        self.rates.nrows()
    }

    /// Entry `Q[x][y]`.
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.rates[(x, y)]
    }

    /// Total escape rate `-Q[x][x]`.
    pub fn exit_rate(&self, x: usize) -> f64 {
        -self.rates[(x, x)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.rates)
    }

    /// Whether every off-diagonal rate is strictly positive.
    pub fn all_rates_positive(&self) -> bool {
        self.first_zero_rate().is_none()
    }

    pub(crate) fn first_zero_rate(&self) -> Option<(usize, usize)> {
        let n = self.n_states();
        (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).find(|&(a, b)| a != b && self.rates[(a, b)] <= 0.0)
    }
}

impl TransitionKernel {
    pub fn from_matrix(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() != probs.ncols() || probs.nrows() == 0 {
            return Err(Error::NotSquare { rows: probs.nrows(), cols: probs.ncols() });
        }
        let n = probs.nrows();
        for i in 0..n {
            for j in 0..n {
                let v = probs[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidProbability { row: i, col: j, value: v });
                }
            }
            let sum: f64 = probs.row(i).iter().sum();
            if (sum - 1.0).abs() > KERNEL_ROW_TOL {
                return Err(Error::NonZeroRowSum { row: i, sum, expected: 1.0 });
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(square_from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self { probs: DMatrix::identity(n, n) }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.probs[(x, y)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.probs)
    }

    /// Matrix product `self · other` (composition of kernels).
    pub fn compose(&self, other: &TransitionKernel) -> TransitionKernel {
        TransitionKernel { probs: &self.probs * &other.probs }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ProbVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidProbVector("empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidProbVector(format!("entry {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidProbVector(format!("entries sum to {sum}")));
        }
        Ok(Self { weights })
    }

    /// Normalizes nonnegative weights to sum one.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbVector("cannot normalize".into()));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn point(n: usize, x: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[x] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn l1_distance(&self, other: &ProbVector) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn sup_distance(&self, other: &ProbVector) -> f64 {
        self.weights.iter().zip(&other.weights).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.weights
    }
}

/// `P(t) = exp(tQ)` by uniformization.
///
/// With `λ = max_x |Q_xx|` and `K = I + Q/λ`, `P(t) = Σ_k Poisson(k; λt) K^k`,
/// truncated once the remaining Poisson mass is below `1e-14`. Every term is a
/// nonnegative matrix, so the result is entrywise nonnegative.
pub fn transition_at(q: &GeneratorMatrix, t: f64) -> Result<TransitionKernel> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    let n = q.n_states();
    let lambda = (0..n).fold(0.0_f64, |m, x| m.max(q.exit_rate(x)));
    if t == 0.0 || lambda == 0.0 {
        return Ok(TransitionKernel::identity(n));
    }
    let mut k = q.matrix() / lambda;
    for i in 0..n {
        k[(i, i)] += 1.0;
    }
    let mean = lambda * t;
    let ln_mean = mean.ln();
    let k_max = (mean + 40.0 * mean.sqrt() + 100.0).ceil() as usize;

    let mut power = DMatrix::<f64>::identity(n, n);
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut log_weight = -mean;
    let mut mass = 0.0;
    for step in 0..=k_max {
        if step > 0 {
            log_weight += ln_mean - (step as f64).ln();
            power = &power * &k;
        }
        let w = log_weight.exp();
        if w > 0.0 {
            out += &power * w;
            mass += w;
        }
        if step as f64 >= mean && 1.0 - mass < UNIFORMIZATION_TAIL {
            break;
        }
    }
    // Entries of K can be -0.0 or round slightly outside [0, 1].
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    TransitionKernel::from_matrix(out)
}

/// Directed support graph of a chain: an edge `x -> y` for every positive
/// off-diagonal rate or probability.
pub trait SupportGraph {
    fn n_states(&self) -> usize;
    fn has_edge(&self, x: usize, y: usize) -> bool;
}

impl SupportGraph for GeneratorMatrix {
    fn n_states(&self) -> usize {
        GeneratorMatrix::n_states(self)
    }
    fn has_edge(&self, x: usize, y: usize) -> bool {
        x != y && self.rate(x, y) > 0.0
    }
}

impl SupportGraph for TransitionKernel {
    fn n_states(&self) -> usize {
        TransitionKernel::n_states(self)
    }
    fn has_edge(&self, x: usize, y: usize) -> bool {
        x != y && self.prob(x, y) > 0.0
    }
}

fn reaches_all<G: SupportGraph + ?Sized>(g: &G, reversed: bool) -> bool {
    let n = g.n_states();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for (w, flag) in seen.iter_mut().enumerate() {
            let edge = if reversed { g.has_edge(w, v) } else { g.has_edge(v, w) };
            if edge && !*flag {
                *flag = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Strong connectivity of the support graph (Kosaraju: every state is reached
/// from state 0 in the graph and in its transpose).
pub fn is_irreducible<G: SupportGraph + ?Sized>(g: &G) -> bool {
    reaches_all(g, false) && reaches_all(g, true)
}

/// Solves `π A = 0, Σ π = 1` with one balance equation replaced by the normalization row.
fn null_vector(a_transposed: DMatrix<f64>) -> Result<ProbVector> {
    let n = a_transposed.nrows();
    let mut m = a_transposed;
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = m.lu().solve(&rhs).ok_or(Error::Reducible)?;
    let w: Vec<f64> = sol.iter().map(|v| v.max(0.0)).collect();
    ProbVector::normalized(w)
}

/// Invariant measure `π Q = 0` of an irreducible generator.
pub fn invariant_measure(q: &GeneratorMatrix) -> Result<ProbVector> {
    if !is_irreducible(q) {
        return Err(Error::Reducible);
    }
    null_vector(q.matrix().transpose())
}

/// Invariant measure `μ P = μ` of an irreducible kernel.
pub fn dtmc_invariant(p: &TransitionKernel) -> Result<ProbVector> {
    if !is_irreducible(p) {
        return Err(Error::Reducible);
    }
    let n = p.n_states();
    let mut a = p.matrix().transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    null_vector(a)
}

/// `|π Q|_∞`, the balance residual of a candidate invariant measure.
pub fn stationarity_residual(pi: &ProbVector, q: &GeneratorMatrix) -> f64 {
    let row = DVector::from_column_slice(pi.as_slice()).transpose() * q.matrix();
    row.iter().fold(0.0, |m, v| m.max(v.abs()))
}
