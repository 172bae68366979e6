//! Log-moment-generating functions and their Legendre–Fenchel conjugates.
//!
//! Laws come in two flavours: exact analytic ones ([`DiscreteLaw`], [`Poisson`])
//! used as fixtures, and [`EmpiricalLaw`]s built from bridge samples. Both sit
//! behind [`LogMgf`], so conjugates, Chernoff bounds and the per-pair
//! [`ConjugateOracle`] do not care which one they get.

use std::fmt::Debug;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bridge::{bridge_generator, BridgeSpec};
use crate::chain::{transition_at, GeneratorMatrix};
use crate::error::{Error, Result};
use crate::extended::ExtReal;
use crate::optim::{maximize_concave_box, BoxSettings, ConcaveObjective};

/// Value, gradient and Hessian of a log-MGF at one point.
#[derive(Debug, Clone)]
pub struct MgfDerivs {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// A law on `R^d` queried through its cumulant generating function
/// `φ(λ) = log E exp(λ·A)`.
pub trait LogMgf: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn log_mgf(&self, lambda: &[f64]) -> f64;
    fn log_mgf_derivs(&self, lambda: &[f64]) -> MgfDerivs;
    /// `log E exp(s |A|_1)` with first and second derivative in `s`.
    fn abs_log_mgf_derivs(&self, s: f64) -> (f64, f64, f64);
    fn mean(&self) -> Vec<f64>;

    fn abs_log_mgf(&self, s: f64) -> f64 {
        self.abs_log_mgf_derivs(s).0
    }

    fn mean_abs(&self) -> f64 {
        self.abs_log_mgf_derivs(0.0).1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neumaier-compensated sum. Log-MGF values over ~10⁵ samples feed line
/// searches that must resolve gains near 1e-13, below the naive summation error.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }
}

fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    values
        .fold(Compensated::default(), |mut c, v| {
            c.add(v);
            c
        })
        .total()
}

/// Weighted log-sum-exp of `μ·z_i` with gradient and Hessian, stabilized by
/// subtracting the largest exponent. `z` holds `len(weights)` rows of length `r`.
fn tilted_moments(mu: &[f64], z: &[f64], weights: Option<&[f64]>, count: usize) -> (f64, Vec<f64>, DMatrix<f64>) {
    let r = mu.len();
    if r == 0 {
        return (0.0, Vec::new(), DMatrix::zeros(0, 0));
    }
    let exps: Vec<f64> = z.chunks_exact(r).map(|zi| dot(mu, zi)).collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = Compensated::default();
    let mut s1 = vec![Compensated::default(); r];
    let mut s2 = DMatrix::<f64>::zeros(r, r);
    for (i, (zi, e)) in z.chunks_exact(r).zip(&exps).enumerate() {
        let w = (e - top).exp() * weights.map_or(1.0, |ws| ws[i]);
        if w == 0.0 {
            continue;
        }
        s0.add(w);
        for a in 0..r {
            s1[a].add(w * zi[a]);
            for b in 0..=a {
                s2[(a, b)] += w * zi[a] * zi[b];
            }
        }
    }
    let total = weights.map_or(count as f64, |ws| ws.iter().sum());
    let s0 = s0.total();
    let value = top + (s0 / total).ln();
    let grad: Vec<f64> = s1.iter().map(|v| v.total() / s0).collect();
    let mut hess = DMatrix::zeros(r, r);
    for a in 0..r {
        for b in 0..=a {
            let c = s2[(a, b)] / s0 - grad[a] * grad[b];
            hess[(a, b)] = c;
            hess[(b, a)] = c;
        }
    }
    (value, grad, hess)
}

/// Same as [`tilted_moments`] for scalar observations.
fn scalar_tilted(s: f64, values: &[f64], weights: Option<&[f64]>) -> (f64, f64, f64) {
    let (v, g, h) = tilted_moments(&[s], values, weights, values.len());
    (v, g[0], h[(0, 0)])
}

/// Finitely supported law with explicit atoms and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    dim: usize,
    atoms: Vec<f64>,
    probs: Vec<f64>,
    abs_norms: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(atoms: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let dim = atoms.first().map(Vec::len).ok_or(Error::EmptyLaw)?;
        if atoms.len() != probs.len() {
            return Err(Error::DimensionMismatch { expected: atoms.len(), got: probs.len() });
        }
        if atoms.iter().any(|a| a.len() != dim || a.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("atoms must be finite and of equal dimension".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("atom probabilities must be nonnegative and sum to 1".into()));
        }
        let abs_norms = atoms.iter().map(|a| a.iter().map(|v| v.abs()).sum()).collect();
        Ok(Self { dim, atoms: atoms.concat(), probs, abs_norms })
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn point_mass(atom: Vec<f64>) -> Result<Self> {
        Self::new(vec![atom], vec![1.0])
    }

    /// Bernoulli(`p`) on `{0, 1}`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![vec![0.0], vec![1.0]], vec![1.0 - p, p])
    }
}

impl LogMgf for DiscreteLaw {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_mgf(&self, lambda: &[f64]) -> f64 {
        self.log_mgf_derivs(lambda).value
    }

    fn log_mgf_derivs(&self, lambda: &[f64]) -> MgfDerivs {
        let (value, grad, hess) = tilted_moments(lambda, &self.atoms, Some(&self.probs), self.probs.len());
        MgfDerivs { value, grad, hess }
    }

    fn abs_log_mgf_derivs(&self, s: f64) -> (f64, f64, f64) {
        scalar_tilted(s, &self.abs_norms, Some(&self.probs))
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (a, p) in self.atoms.chunks_exact(self.dim).zip(&self.probs) {
            m.iter_mut().zip(a).for_each(|(mi, ai)| *mi += p * ai);
        }
        m
    }
}

/// Poisson law with mean `rate` on the nonnegative integers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Poisson {
    pub rate: f64,
}

impl LogMgf for Poisson {
    fn dim(&self) -> usize {
        1
    }

    fn log_mgf(&self, lambda: &[f64]) -> f64 {
        self.rate * lambda[0].exp_m1()
    }

    fn log_mgf_derivs(&self, lambda: &[f64]) -> MgfDerivs {
        let e = lambda[0].exp();
        MgfDerivs { value: self.rate * lambda[0].exp_m1(), grad: vec![self.rate * e], hess: DMatrix::from_element(1, 1, self.rate * e) }
    }

    fn abs_log_mgf_derivs(&self, s: f64) -> (f64, f64, f64) {
        let e = s.exp();
        (self.rate * s.exp_m1(), self.rate * e, self.rate * e)
    }

    fn mean(&self) -> Vec<f64> {
        vec![self.rate]
    }
}

/// i.i.d. samples from a law on `R^d`, with plug-in log-MGF.
///
/// On construction the samples are centred and expressed in an orthonormal
/// basis of their span. Along directions orthogonal to the span the law is
/// deterministic, so `φ` is exactly linear there and the conjugate is `+inf`
/// off the affine hull of the samples.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw {
    dim: usize,
    count: usize,
    samples: Vec<f64>,
    mean: Vec<f64>,
    /// `rank` orthonormal vectors of length `dim`, concatenated.
    basis: Vec<f64>,
    rank: usize,
    /// centred samples in basis coordinates, `count × rank`.
    reduced: Vec<f64>,
    abs_norms: Vec<f64>,
}

impl PartialEq for EmpiricalLaw {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.samples == other.samples
    }
}

impl EmpiricalLaw {
    /// `samples` holds `N` rows of length `dim`, row-major.
    pub fn new(dim: usize, samples: Vec<f64>) -> Result<Self> {
        if dim == 0 || samples.is_empty() {
            return Err(Error::EmptyLaw);
        }
        if !samples.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: samples.len() % dim });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("empirical samples must be finite".into()));
        }
        let count = samples.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in samples.chunks_exact(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for row in samples.chunks_exact(dim) {
            for a in 0..dim {
                let ca = row[a] - mean[a];
                for b in 0..=a {
                    cov[(a, b)] += ca * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= count as f64;
        let trace = cov.trace();
        let eig = SymmetricEigen::new(cov);
        let keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > 1e-12 * trace.max(f64::MIN_POSITIVE)).collect();
        let rank = keep.len();
        let basis: Vec<f64> = keep.iter().flat_map(|&k| eig.eigenvectors.column(k).iter().copied().collect::<Vec<_>>()).collect();
        let mut reduced = Vec::with_capacity(count * rank);
        for row in samples.chunks_exact(dim) {
            for u in basis.chunks_exact(dim) {
                reduced.push(row.iter().zip(&mean).zip(u).map(|((v, m), ui)| (v - m) * ui).sum());
            }
        }
        let abs_norms = samples.chunks_exact(dim).map(|r| r.iter().map(|v| v.abs()).sum()).collect();
        Ok(Self { dim, count, samples, mean, basis, rank, reduced, abs_norms })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyLaw)?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("sample rows must share one dimension".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Dimension of the affine hull of the samples.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    fn project(&self, lambda: &[f64]) -> Vec<f64> {
        self.basis.chunks_exact(self.dim).map(|u| dot(u, lambda)).collect()
    }

    /// Flat dump: `d` and `N` as little-endian u64, then `N·d` little-endian f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.count as u64).to_le_bytes())?;
        for v in &self.samples {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        let mut samples = Vec::with_capacity(dim * count);
        for _ in 0..dim * count {
            r.read_exact(&mut word)?;
            samples.push(f64::from_le_bytes(word));
        }
        if r.read(&mut word)? != 0 {
            return Err(Error::Io(format!("trailing bytes in sample dump {}", path.display())));
        }
        Self::new(dim, samples)
    }

    /// CSV dump: a `d,N` header record, then one record of `d` floats per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).has_headers(false).from_path(path).map_err(csv_err)?;
        w.write_record([self.dim.to_string(), self.count.to_string()]).map_err(csv_err)?;
        for row in self.iter() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_path(path).map_err(csv_err)?;
        let mut records = r.records();
        let header = records.next().ok_or_else(|| Error::Io("empty sample csv".into()))?.map_err(csv_err)?;
        let parse_usize =
            |s: Option<&str>| s.and_then(|v| v.trim().parse::<usize>().ok()).ok_or_else(|| Error::Io("bad csv header".into()));
        let dim = parse_usize(header.get(0))?;
        let count = parse_usize(header.get(1))?;
        let mut samples = Vec::with_capacity(dim * count);
        for rec in records {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != dim {
                return Err(Error::Io(format!("expected {dim} columns, got {}", rec.len())));
            }
            for field in rec.iter() {
                samples.push(field.trim().parse::<f64>().map_err(|e| Error::Io(e.to_string()))?);
            }
        }
        if samples.len() != dim * count {
            return Err(Error::Io(format!("expected {count} samples, got {}", samples.len() / dim.max(1))));
        }
        Self::new(dim, samples)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl LogMgf for EmpiricalLaw {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_mgf(&self, lambda: &[f64]) -> f64 {
        let mu = self.project(lambda);
        let linear = dot(lambda, &self.mean);
        if self.rank == 0 {
            return linear;
        }
        let top = self.reduced.chunks_exact(self.rank).map(|z| dot(&mu, z)).fold(f64::NEG_INFINITY, f64::max);
        let s = compensated_sum(self.reduced.chunks_exact(self.rank).map(|z| (dot(&mu, z) - top).exp()));
        linear + top + (s / self.count as f64).ln()
    }

    fn log_mgf_derivs(&self, lambda: &[f64]) -> MgfDerivs {
        let d = self.dim;
        let mu = self.project(lambda);
        let (v, g, h) = tilted_moments(&mu, &self.reduced, None, self.count);
        let mut grad = self.mean.clone();
        let mut hess = DMatrix::zeros(d, d);
        let u: Vec<&[f64]> = self.basis.chunks_exact(d).collect();
        for a in 0..self.rank {
            for i in 0..d {
                grad[i] += u[a][i] * g[a];
            }
            for b in 0..self.rank {
                let hab = h[(a, b)];
                if hab == 0.0 {
                    continue;
                }
                for i in 0..d {
                    for j in 0..d {
                        hess[(i, j)] += u[a][i] * hab * u[b][j];
                    }
                }
            }
        }
        MgfDerivs { value: dot(lambda, &self.mean) + v, grad, hess }
    }

    fn abs_log_mgf_derivs(&self, s: f64) -> (f64, f64, f64) {
        scalar_tilted(s, &self.abs_norms, None)
    }

    fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }
}

/// Law of `|A|_1` under another law, as a one-dimensional [`LogMgf`].
#[derive(Debug, Clone, Copy)]
pub struct AbsLaw<'a>(pub &'a dyn LogMgf);

impl LogMgf for AbsLaw<'_> {
    fn dim(&self) -> usize {
        1
    }
    fn log_mgf(&self, lambda: &[f64]) -> f64 {
        self.0.abs_log_mgf(lambda[0])
    }
    fn log_mgf_derivs(&self, lambda: &[f64]) -> MgfDerivs {
        let (value, g, h) = self.0.abs_log_mgf_derivs(lambda[0]);
        MgfDerivs { value, grad: vec![g], hess: DMatrix::from_element(1, 1, h) }
    }
    fn abs_log_mgf_derivs(&self, s: f64) -> (f64, f64, f64) {
        // |A|_1 is nonnegative
        self.0.abs_log_mgf_derivs(s)
    }
    fn mean(&self) -> Vec<f64> {
        vec![self.0.mean_abs()]
    }
}

/// `φ(λ)` for the given law.
pub fn log_mgf(law: &dyn LogMgf, lambda: &[f64]) -> f64 {
    law.log_mgf(lambda)
}

/// `φ_{|·|}(s) = log E exp(s |A|_1)`.
pub fn abs_log_mgf(law: &dyn LogMgf, s: f64) -> f64 {
    law.abs_log_mgf(s)
}

/// Tuning for the numerical conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConjugateSettings {
    /// Box half-width `Λ` for the dual variable.
    pub bound: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for ConjugateSettings {
    fn default() -> Self {
        Self { bound: 40.0, grad_tol: 1e-9, max_iter: 500 }
    }
}

impl ConjugateSettings {
    pub(crate) fn box_settings(&self, bound: f64) -> BoxSettings {
        BoxSettings { bound, grad_tol: self.grad_tol, max_iter: self.max_iter }
    }
}

/// Result of a box-truncated conjugate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugateEstimate {
    pub value: f64,
    pub maximizer: Vec<f64>,
    pub converged: bool,
    /// The maximizer touched `[-Λ, Λ]^d`: the point lies outside the effective
    /// domain or beyond the empirical support.
    pub boundary: bool,
}

struct DualObjective<'a> {
    law: &'a dyn LogMgf,
    a: &'a [f64],
}

impl ConcaveObjective for DualObjective<'_> {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        dot(x, self.a) - self.law.log_mgf(x)
    }
    fn derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let d = self.law.log_mgf_derivs(x);
        let grad = self.a.iter().zip(&d.grad).map(|(a, g)| a - g).collect();
        (dot(x, self.a) - d.value, grad, -d.hess)
    }
}

/// `sup_{λ ∈ [-Λ,Λ]^d} λ·a − φ(λ)`.
pub fn conjugate_at(law: &dyn LogMgf, a: &[f64], bound: f64) -> Result<ConjugateEstimate> {
    conjugate_at_with(law, a, &ConjugateSettings { bound, ..ConjugateSettings::default() })
}

pub fn conjugate_at_with(law: &dyn LogMgf, a: &[f64], settings: &ConjugateSettings) -> Result<ConjugateEstimate> {
    if a.len() != law.dim() {
        return Err(Error::DimensionMismatch { expected: law.dim(), got: a.len() });
    }
    if !(settings.bound > 0.0) {
        return Err(Error::InvalidArgument("box bound must be positive".into()));
    }
    let obj = DualObjective { law, a };
    let r = maximize_concave_box(&obj, &vec![0.0; a.len()], &settings.box_settings(settings.bound));
    Ok(ConjugateEstimate { value: r.value, maximizer: r.x, converged: r.converged, boundary: r.at_boundary })
}

/// Classifies a sequence of box-truncated values at `Λ, 2Λ, 4Λ` that all touched
/// the box. Linear growth (increments roughly doubling) means the supremum is
/// infinite; shrinking increments mean it is approached at infinity but finite.
pub(crate) fn boundary_values_diverge(v1: f64, v2: f64, v4: f64) -> bool {
    let inc1 = v2 - v1;
    let inc2 = v4 - v2;
    inc2 > 1e-9 * v4.abs().max(1.0) && inc2 >= 1.5 * inc1
}

/// `φ*(a)` as an extended real.
///
/// The box is doubled twice when the maximizer touches it; the value is `+inf`
/// when it touches on both doublings and keeps growing linearly.
pub fn conjugate(law: &dyn LogMgf, a: &[f64], settings: &ConjugateSettings) -> Result<ExtReal> {
    let first = conjugate_at_with(law, a, settings)?;
    if !first.boundary {
        return Ok(ExtReal::Finite(first.value.max(0.0)));
    }
    let wide = |k: f64| conjugate_at_with(law, a, &ConjugateSettings { bound: k * settings.bound, ..*settings });
    let second = wide(2.0)?;
    if !second.boundary {
        return Ok(ExtReal::Finite(second.value.max(0.0)));
    }
    let third = wide(4.0)?;
    if third.boundary && boundary_values_diverge(first.value, second.value, third.value) {
        Ok(ExtReal::PosInf)
    } else {
        Ok(ExtReal::Finite(third.value.max(0.0)))
    }
}

/// `φ*_{|·|}(r) = sup_s r s − φ_{|·|}(s)`.
pub fn abs_conjugate(law: &dyn LogMgf, r: f64, settings: &ConjugateSettings) -> Result<ExtReal> {
    conjugate(&AbsLaw(law), &[r], settings)
}

/// One row of a superlinearity diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub r: f64,
    pub conjugate: ExtReal,
    /// `φ*_{|·|}(r) / r`.
    pub ratio: ExtReal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperlinearityReport {
    pub rows: Vec<GrowthRow>,
    /// Ratios increase along the grid: strictly between finite entries, and
    /// never drop back from `+inf`.
    pub monotone_increasing: bool,
}

/// Tabulates `φ*_{|·|}(r)/r` on an increasing grid of `r > 0`.
pub fn superlinearity_check(law: &dyn LogMgf, r_grid: &[f64], settings: &ConjugateSettings) -> Result<SuperlinearityReport> {
    if r_grid.is_empty() {
        return Err(Error::InvalidArgument("r grid must be nonempty".into()));
    }
    if r_grid.windows(2).any(|w| !(w[1] > w[0])) || r_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument("r grid must be positive and strictly increasing".into()));
    }
    let rows = r_grid
        .iter()
        .map(|&r| {
            let c = abs_conjugate(law, r, settings)?;
            let ratio = match c {
                ExtReal::Finite(v) => ExtReal::Finite(v / r),
                ExtReal::PosInf => ExtReal::PosInf,
            };
            Ok(GrowthRow { r, conjugate: c, ratio })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone_increasing = rows.windows(2).all(|w| match (w[0].ratio, w[1].ratio) {
        (ExtReal::Finite(a), ExtReal::Finite(b)) => b > a,
        (_, ExtReal::PosInf) => true,
        (ExtReal::PosInf, ExtReal::Finite(_)) => false,
    });
    Ok(SuperlinearityReport { rows, monotone_increasing })
}

/// Exponential decay bound `sup_{s≥0} sR − φ_{|·|}(s)` for `P(|K^{n,xy}|_1 ≥ R)`.
///
/// Equals `φ*_{|·|}(R)` above the mean of `|A|_1` and zero below it.
pub fn chernoff_bound(law: &dyn LogMgf, r: f64, settings: &ConjugateSettings) -> Result<ExtReal> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("R must be positive, got {r}")));
    }
    if r <= law.mean_abs() {
        return Ok(ExtReal::ZERO);
    }
    abs_conjugate(law, r, settings)
}

/// Number of grid points for the supremum of the bridge generator.
const FLUX_BOUND_GRID: usize = 2000;

/// Upper bound `s + Q̄ T0 (exp(2s/T0) − 1)` on `φ^{xy}_{|·|}(s)` for the
/// occupation-plus-flux law of the `x → y` bridge, `s ≥ 0`.
///
/// `Q̄` sums the suprema over `[0, T0)` of the bridge jump rates that do not
/// enter `y`, with jumps out of `y` counted with the rates `Q̄_yb`. The
/// suprema are taken on a uniform grid of `[0, T0 − 1e-4·T0]` together with the
/// closed-form endpoint values `Q_ab Q_by / Q_ay` (`a, b ≠ y`) and `Q_yb P_by(T0)`.
pub fn flux_mgf_bound(q: &GeneratorMatrix, x: usize, y: usize, t0: f64, s: f64) -> Result<f64> {
    let qbar = flux_rate_bound(q, x, y, t0)?;
    Ok(s + qbar * t0 * (2.0 * s / t0).exp_m1())
}

/// The dominating total jump rate `Q̄^{xy}`.
pub fn flux_rate_bound(q: &GeneratorMatrix, x: usize, y: usize, t0: f64) -> Result<f64> {
    if let Some((row, col)) = q.first_zero_rate() {
        return Err(Error::ZeroRate { row, col });
    }
    let spec = BridgeSpec::new(q.clone(), x, y, t0)?;
    let n = q.n_states();
    let p_t0 = transition_at(q, t0)?;
    let horizon = t0 * (1.0 - 1e-4);
    let mut sup = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a == b || b == y {
                continue;
            }
            sup[(a, b)] = if a == y { q.rate(y, b) * p_t0.prob(b, y) } else { q.rate(a, b) * q.rate(b, y) / q.rate(a, y) };
        }
    }
    for k in 0..FLUX_BOUND_GRID {
        let t = horizon * k as f64 / (FLUX_BOUND_GRID - 1) as f64;
        for a in 0..n {
            for b in 0..n {
                if a != b && b != y {
                    sup[(a, b)] = sup[(a, b)].max(bridge_generator(&spec, a, b, t)?);
                }
            }
        }
    }
    Ok(sup.iter().sum())
}

/// Per-pair conjugate evaluators `φ^{xy}`, `φ^{xy*}` over an `n`-state chain.
///
/// Read-only after construction; shareable across threads.
#[derive(Debug, Clone)]
pub struct ConjugateOracle {
    n_states: usize,
    dim: usize,
    laws: Vec<Option<Arc<dyn LogMgf>>>,
    settings: ConjugateSettings,
}

impl ConjugateOracle {
    pub fn new(n_states: usize, dim: usize) -> Self {
        Self { n_states, dim, laws: vec![None; n_states * n_states], settings: ConjugateSettings::default() }
    }

    pub fn with_settings(mut self, settings: ConjugateSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn set_law(&mut self, x: usize, y: usize, law: Arc<dyn LogMgf>) -> Result<()> {
        if x >= self.n_states || y >= self.n_states {
            return Err(Error::StateOutOfRange { state: x.max(y), n_states: self.n_states });
        }
        if law.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: law.dim() });
        }
        self.laws[x * self.n_states + y] = Some(law);
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn settings(&self) -> &ConjugateSettings {
        &self.settings
    }

    pub fn law(&self, x: usize, y: usize) -> Option<&dyn LogMgf> {
        self.laws[x * self.n_states + y].as_deref()
    }

    pub fn covers(&self, x: usize, y: usize) -> bool {
        self.law(x, y).is_some()
    }

    pub fn log_mgf(&self, x: usize, y: usize, lambda: &[f64]) -> Option<f64> {
        self.law(x, y).map(|l| l.log_mgf(lambda))
    }

    pub fn mean(&self, x: usize, y: usize) -> Option<Vec<f64>> {
        self.law(x, y).map(|l| l.mean())
    }

    /// `φ^{xy*}(a)`, or `None` when the pair has no law.
    pub fn conjugate(&self, x: usize, y: usize, a: &[f64]) -> Option<Result<ExtReal>> {
        self.law(x, y).map(|l| conjugate(l, a, &self.settings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::Distribution;

    fn bernoulli_conjugate(a: f64) -> f64 {
        // KL(Bernoulli(a) || Bernoulli(1/2))
        let xlx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
        xlx(a) + xlx(1.0 - a) + std::f64::consts::LN_2
    }

    fn empirical_bernoulli(n: usize, seed: u64) -> EmpiricalLaw {
        let mut rng = stream(seed, Domain::Test, 0, 0);
        let s: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        EmpiricalLaw::new(1, s).unwrap()
    }

    #[test]
    fn log_mgf_examples() {
        let pm = DiscreteLaw::point_mass(vec![0.5, -2.0]).unwrap();
        assert_abs_diff_eq!(log_mgf(&pm, &[1.5, 0.25]), 0.75 - 0.5, epsilon = 1e-15);
        let b = DiscreteLaw::bernoulli(0.5).unwrap();
        assert_abs_diff_eq!(log_mgf(&b, &[1.0]), ((1.0 + 1f64.exp()) / 2.0).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_mgf(&b, &[1.0]), 0.620115, epsilon = 1e-6);
        assert_eq!(log_mgf(&b, &[0.0]), 0.0);
        let emp = empirical_bernoulli(1000, 1);
        assert_eq!(log_mgf(&emp, &[0.0]), 0.0);
    }

    #[test]
    fn abs_log_mgf_examples() {
        let pm = DiscreteLaw::point_mass(vec![0.5, -2.0]).unwrap();
        assert_abs_diff_eq!(abs_log_mgf(&pm, 0.7), 0.7 * 2.5, epsilon = 1e-14);
        let simplex = EmpiricalLaw::from_rows(&[vec![0.2, 0.8], vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        for s in [-3.0, 0.4, 2.0] {
            assert_abs_diff_eq!(abs_log_mgf(&simplex, s), s, epsilon = 1e-14);
        }
        assert_eq!(abs_log_mgf(&simplex, 0.0), 0.0);
    }

    #[test]
    fn conjugate_examples() {
        let b = DiscreteLaw::bernoulli(0.5).unwrap();
        let at_mean = conjugate_at(&b, &[0.5], 40.0).unwrap();
        assert!(at_mean.value.abs() < 1e-15 && at_mean.maximizer[0].abs() < 1e-12);
        let c = conjugate_at(&b, &[0.9], 40.0).unwrap();
        assert!(c.converged && !c.boundary);
        assert_abs_diff_eq!(c.value, bernoulli_conjugate(0.9), epsilon = 1e-10);
        assert_abs_diff_eq!(c.value, 0.368064, epsilon = 1e-6);

        let out = conjugate_at(&b, &[1.3], 30.0).unwrap();
        assert!(out.boundary);
        assert_abs_diff_eq!(out.value, 1.3 * 30.0 - log_mgf(&b, &[30.0]), epsilon = 1e-9);
        let wider = conjugate_at(&b, &[1.3], 60.0).unwrap();
        assert!(wider.value > out.value + 1.0);
        assert_eq!(conjugate(&b, &[1.3], &ConjugateSettings::default()).unwrap(), ExtReal::PosInf);
    }

    #[test]
    fn conjugate_at_support_edge_stays_finite() {
        // an atom at the edge of the support: sup approached at infinity but finite
        let b = DiscreteLaw::bernoulli(0.25).unwrap();
        let v = conjugate(&b, &[1.0], &ConjugateSettings::default()).unwrap();
        assert_abs_diff_eq!(v.finite().unwrap(), -(0.25f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn empirical_conjugate_is_infinite_off_the_affine_hull() {
        let law = EmpiricalLaw::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        assert_eq!(law.rank(), 1);
        let s = ConjugateSettings::default();
        assert!(conjugate(&law, &[0.4, 0.6], &s).unwrap().is_finite());
        assert!(conjugate(&law, &[0.4, 0.7], &s).unwrap().is_infinite());
        assert!(conjugate(&law, &[0.9, 0.1], &s).unwrap().is_infinite());
    }

    #[test]
    fn empirical_conjugate_vanishes_at_mean() {
        let law = empirical_bernoulli(10_000, 3);
        let m = law.mean();
        let c = conjugate_at(&law, &m, 40.0).unwrap();
        assert!(c.value.abs() < 1e-6);
    }

    #[test]
    fn empirical_bernoulli_converges_to_analytic() {
        let law = empirical_bernoulli(100_000, 11);
        let s = ConjugateSettings::default();
        let worst = (1..=9)
            .map(|k| {
                let a = k as f64 / 10.0;
                (conjugate(&law, &[a], &s).unwrap().finite().unwrap() - bernoulli_conjugate(a)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "worst error {worst}");
    }

    #[test]
    fn superlinearity_examples() {
        let s = ConjugateSettings::default();
        let occ = EmpiricalLaw::from_rows(&[vec![0.2, 0.8], vec![1.0, 0.0]]).unwrap();
        let rep = superlinearity_check(&occ, &[2.0], &s).unwrap();
        assert!(rep.rows[0].conjugate.is_infinite());

        let pois = Poisson { rate: 1.0 };
        let rep = superlinearity_check(&pois, &[5.0, 10.0, 20.0, 40.0], &s).unwrap();
        assert!(rep.monotone_increasing);
        for row in &rep.rows {
            // s(r | 1) = r ln r − r + 1
            let exact = row.r * row.r.ln() - row.r + 1.0;
            assert_abs_diff_eq!(row.conjugate.finite().unwrap(), exact, epsilon = 1e-8);
        }

        let pm = DiscreteLaw::point_mass(vec![1.5]).unwrap();
        let rep = superlinearity_check(&pm, &[1.0, 2.0], &s).unwrap();
        assert!(rep.rows.iter().all(|r| r.conjugate.is_infinite()));
    }

    #[test]
    fn chernoff_examples() {
        let s = ConjugateSettings::default();
        let pois = Poisson { rate: 1.0 };
        assert_eq!(chernoff_bound(&pois, 0.5, &s).unwrap(), ExtReal::ZERO);
        let v = chernoff_bound(&pois, 3.0, &s).unwrap().finite().unwrap();
        assert_abs_diff_eq!(v, 3.0 * 3f64.ln() - 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 1.295837, epsilon = 1e-6);
        let occ = EmpiricalLaw::from_rows(&[vec![0.2, 0.8], vec![1.0, 0.0]]).unwrap();
        assert!(chernoff_bound(&occ, 1.5, &s).unwrap().is_infinite());
    }

    #[test]
    fn poisson_empirical_law_matches_closed_form_near_mean() {
        let mut rng = stream(5, Domain::Test, 1, 0);
        let dist = rand_distr::Poisson::new(2.0).unwrap();
        let s: Vec<f64> = (0..50_000).map(|_| dist.sample(&mut rng)).collect();
        let law = EmpiricalLaw::new(1, s).unwrap();
        let exact = Poisson { rate: 2.0 };
        for lam in [-0.5, 0.3] {
            assert!((log_mgf(&law, &[lam]) - log_mgf(&exact, &[lam])).abs() < 0.02);
        }
    }

    #[test]
    fn flux_bound_rejects_zero_rates() {
        let q = GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(flux_mgf_bound(&q, 0, 1, 1.0, 0.5), Err(Error::ZeroRate { row: 0, col: 2 })));
    }

    #[test]
    fn flux_bound_shape() {
        let q = GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(flux_mgf_bound(&q, 0, 1, 1.0, 0.0).unwrap(), 0.0);
        let vals: Vec<f64> = (0..20).map(|k| flux_mgf_bound(&q, 0, 1, 1.0, k as f64 * 0.1).unwrap()).collect();
        for w in vals.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12);
        }
    }

    #[test]
    fn sample_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let law = EmpiricalLaw::from_rows(&[vec![0.1, 0.2, 3.0], vec![1.0 / 3.0, 0.0, -7.25]]).unwrap();
        let bin = dir.path().join("law.bin");
        law.write_binary(&bin).unwrap();
        assert_eq!(EmpiricalLaw::read_binary(&bin).unwrap(), law);
        let csv = dir.path().join("law.csv");
        law.write_csv(&csv).unwrap();
        assert_eq!(EmpiricalLaw::read_csv(&csv).unwrap(), law);
        let raw = std::fs::read(&bin).unwrap();
        assert_eq!(raw.len(), 16 + 6 * 8);
        assert_eq!(&raw[..8], &3u64.to_le_bytes());
    }
}
