//! Path simulation of continuous-time chains and the windowed discrete-time
//! embedding `(X_m, A_m)` with its accumulators `(K^n, Θ^n)`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::chain::{GeneratorMatrix, ProbVector};
use crate::error::{Error, Result};
use crate::ratefun::{FluxField, FluxMatrix, PairMeasure};

/// Which observable a window (or bridge) is reduced to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawMode {
    /// Occupation fractions, `d = n`.
    #[default]
    Occupation,
    /// Occupation fractions followed by the row-major jump counts divided by
    /// the window length, `d = n + n²`.
    Flux,
}

impl LawMode {
    pub fn dim(self, n_states: usize) -> usize {
        match self {
            LawMode::Occupation => n_states,
            LawMode::Flux => n_states + n_states * n_states,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LawMode::Occupation => "occupation",
            LawMode::Flux => "flux",
        }
    }
}

/// A piecewise-constant path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub n_states: usize,
    pub initial: usize,
    /// `(jump time, destination)`, times strictly increasing in `(0, horizon]`.
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl PathRecord {
    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial, |j| j.1)
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jumps.partition_point(|(s, _)| *s <= t);
        if idx == 0 {
            self.initial
        } else {
            self.jumps[idx - 1].1
        }
    }

    /// Checks increasing jump times inside the horizon and no self-jumps.
    pub fn is_valid(&self) -> bool {
        let mut prev_t = 0.0;
        let mut prev_x = self.initial;
        for &(t, x) in &self.jumps {
            if !(t > prev_t) || t > self.horizon || x == prev_x || x >= self.n_states {
                return false;
            }
            prev_t = t;
            prev_x = x;
        }
        self.initial < self.n_states
    }
}

/// Precomputed jump tables for repeated simulation of one generator.
#[derive(Debug, Clone)]
pub struct Simulator {
    n_states: usize,
    exit: Vec<f64>,
    /// Per state: destinations with positive rate and their cumulative rates.
    targets: Vec<Vec<(f64, usize)>>,
}

impl Simulator {
    pub fn new(q: &GeneratorMatrix) -> Self {
        let n = q.n_states();
        let exit = (0..n).map(|x| q.exit_rate(x)).collect();
        let targets = (0..n)
            .map(|x| {
                let mut acc = 0.0;
                (0..n)
                    .filter(|&y| y != x && q.rate(x, y) > 0.0)
                    .map(|y| {
                        acc += q.rate(x, y);
                        (acc, y)
                    })
                    .collect()
            })
            .collect();
        Self { n_states: n, exit, targets }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Draws the next holding time and destination from `x`, or `None` if `x` is absorbing.
    #[inline]
    fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Option<(f64, usize)> {
        let rate = self.exit[x];
        if rate <= 0.0 {
            return None;
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / rate;
        let t = &self.targets[x];
        let dest = if t.len() == 1 {
            t[0].1
        } else {
            let u = rng.random::<f64>() * rate;
            t.iter().find(|(c, _)| u < *c).unwrap_or(&t[t.len() - 1]).1
        };
        Some((hold, dest))
    }

    /// Exact path on `[0, horizon]` from `x0`.
    pub fn path<R: Rng + ?Sized>(&self, x0: usize, horizon: f64, rng: &mut R) -> Result<PathRecord> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if x0 >= self.n_states {
            return Err(Error::StateOutOfRange { state: x0, n_states: self.n_states });
        }
        let mut jumps = Vec::new();
        let mut t = 0.0;
        let mut x = x0;
        loop {
            let (hold, dest) = self.step(x, rng).ok_or(Error::AbsorbingState(x))?;
            t += hold;
            if t > horizon {
                break;
            }
            jumps.push((t, dest));
            x = dest;
        }
        Ok(PathRecord { n_states: self.n_states, initial: x0, jumps, horizon })
    }

    /// Occupation fractions of a fresh path on `[0, horizon]` without storing it.
    /// Returns the fractions and the final state.
    pub fn occupation_run<R: Rng + ?Sized>(&self, x0: usize, horizon: f64, rng: &mut R) -> Result<(Vec<f64>, usize)> {
        let mut time = vec![0.0; self.n_states];
        let mut t = 0.0;
        let mut x = x0;
        loop {
            let (hold, dest) = self.step(x, rng).ok_or(Error::AbsorbingState(x))?;
            if t + hold > horizon {
                time[x] += horizon - t;
                break;
            }
            time[x] += hold;
            t += hold;
            x = dest;
        }
        time.iter_mut().for_each(|v| *v /= horizon);
        Ok((time, x))
    }
}

/// Exact path draw: exponential holding times with rate `−Q_xx`, jumps to `b`
/// with probability `Q_xb / (−Q_xx)`.
pub fn gillespie<R: Rng + ?Sized>(q: &GeneratorMatrix, x0: usize, horizon: f64, rng: &mut R) -> Result<PathRecord> {
    Simulator::new(q).path(x0, horizon, rng)
}

/// Time spent in each state on `[from, to]`, for a path defined there.
fn time_in_states(path: &PathRecord, from: f64, to: f64) -> Vec<f64> {
    let mut time = vec![0.0; path.n_states];
    let mut x = path.state_at(from);
    let mut t = from;
    let start = path.jumps.partition_point(|(s, _)| *s <= from);
    for &(s, dest) in &path.jumps[start..] {
        if s > to {
            break;
        }
        time[x] += s - t;
        t = s;
        x = dest;
    }
    time[x] += to - t;
    time
}

/// Fraction of `[0, T]` spent in each state.
pub fn occupation(path: &PathRecord, horizon: f64) -> Result<ProbVector> {
    if !(horizon > 0.0) || path.jumps.last().is_some_and(|j| j.0 > horizon) {
        return Err(Error::InvalidArgument("path is not defined on the requested horizon".into()));
    }
    let time = time_in_states(path, 0.0, horizon);
    ProbVector::normalized(time.into_iter().map(|v| v / horizon).collect())
}

/// Jump counts per ordered pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluxCounts {
    pub n_states: usize,
    pub counts: Vec<u64>,
}

impl FluxCounts {
    pub fn get(&self, x: usize, y: usize) -> u64 {
        self.counts[x * self.n_states + y]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts divided by the elapsed time.
    pub fn per_time(&self, horizon: f64) -> FluxMatrix {
        let entries = self.counts.iter().map(|&c| c as f64 / horizon).collect();
        FluxMatrix::from_flat(self.n_states, entries).expect("counts are nonnegative")
    }
}

/// Cumulative flux `W_xy`: number of jumps `x → y` along the path.
pub fn cumulative_flux(path: &PathRecord) -> FluxCounts {
    let n = path.n_states;
    let mut counts = vec![0u64; n * n];
    let mut prev = path.initial;
    for &(_, dest) in &path.jumps {
        counts[prev * n + dest] += 1;
        prev = dest;
    }
    FluxCounts { n_states: n, counts }
}

/// Reduces a window `[from, to]` of a path to its observable vector.
pub(crate) fn window_observable(path: &PathRecord, from: f64, to: f64, mode: LawMode) -> Vec<f64> {
    let len = to - from;
    let n = path.n_states;
    let mut out: Vec<f64> = time_in_states(path, from, to).into_iter().map(|v| v / len).collect();
    if mode == LawMode::Flux {
        let mut counts = vec![0.0; n * n];
        let start = path.jumps.partition_point(|(s, _)| *s <= from);
        let mut prev = path.state_at(from);
        for &(s, dest) in &path.jumps[start..] {
            if s > to {
                break;
            }
            counts[prev * n + dest] += 1.0;
            prev = dest;
        }
        out.extend(counts.into_iter().map(|c| c / len));
    }
    out
}

/// Endpoint states `X_0..X_n` and window observables `A_1..A_n` of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEmbedding {
    pub t0: f64,
    pub mode: LawMode,
    pub n_states: usize,
    pub states: Vec<usize>,
    /// `A_m` as rows of length `mode.dim(n_states)`.
    pub blocks: Vec<Vec<f64>>,
}

impl DiscreteEmbedding {
    pub fn n_windows(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.mode.dim(self.n_states)
    }

    /// `Ā^n = n^{-1} Σ A_m`.
    pub fn ergodic_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.dim()];
        for b in &self.blocks {
            avg.iter_mut().zip(b).for_each(|(a, v)| *a += v);
        }
        let n = self.n_windows() as f64;
        avg.iter_mut().for_each(|a| *a /= n);
        avg
    }

    /// Reorders the windows (together with their endpoint pairs).
    pub fn permuted(&self, order: &[usize]) -> PermutedWindows {
        PermutedWindows {
            pairs: order.iter().map(|&m| (self.states[m], self.states[m + 1])).collect(),
            blocks: order.iter().map(|&m| self.blocks[m].clone()).collect(),
            n_states: self.n_states,
            dim: self.dim(),
        }
    }
}

/// Windows given as `(endpoint pair, observable)` without path structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedWindows {
    pub pairs: Vec<(usize, usize)>,
    pub blocks: Vec<Vec<f64>>,
    pub n_states: usize,
    pub dim: usize,
}

/// Splits a path on `[0, n·T0]` into `n` windows of length `T0`.
pub fn discrete_embedding(path: &PathRecord, t0: f64, mode: LawMode) -> Result<DiscreteEmbedding> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidArgument(format!("window length must be positive, got {t0}")));
    }
    let windows = (path.horizon / t0).round();
    if windows < 1.0 || (windows * t0 - path.horizon).abs() > 1e-9 * path.horizon.max(1.0) {
        return Err(Error::InvalidArgument(format!("horizon {} is not an integer multiple of the window length {t0}", path.horizon)));
    }
    let n = windows as usize;
    let edge = |m: usize| if m == n { path.horizon } else { m as f64 * t0 };
    let states = (0..=n).map(|m| if m == 0 { path.initial } else { path.state_at(edge(m)) }).collect();
    let blocks = (1..=n).map(|m| window_observable(path, edge(m - 1), edge(m), mode)).collect();
    Ok(DiscreteEmbedding { t0, mode, n_states: path.n_states, states, blocks })
}

/// `(K^n, Θ^n)` together with the integer pair counts `n·Θ^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPair {
    pub k: FluxField,
    pub pair_counts: Vec<u64>,
    pub windows: usize,
}

impl EmpiricalPair {
    /// `Θ^n = (pair counts) / n`.
    pub fn theta(&self) -> PairMeasure {
        let n = self.windows as f64;
        PairMeasure::from_flat_unchecked_sum(self.k.n_states(), self.pair_counts.iter().map(|&c| c as f64 / n).collect())
            .expect("pair counts sum to the window count")
    }

    /// ℓ¹ distance of `(K^n, Θ^n)` to a target `(k, θ)`.
    pub fn l1_distance(&self, k: &FluxField, theta: &PairMeasure) -> f64 {
        let n = self.windows as f64;
        let dk: f64 = self.k.as_slice().iter().zip(k.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        let dt: f64 = self.pair_counts.iter().zip(theta.as_slice()).map(|(&c, b)| (c as f64 / n - b).abs()).sum();
        dk + dt
    }
}

fn accumulate_windows<'a>(n_states: usize, dim: usize, windows: impl Iterator<Item = ((usize, usize), &'a [f64])>) -> EmpiricalPair {
    let mut k = FluxField::zeros(n_states, dim);
    let mut pair_counts = vec![0u64; n_states * n_states];
    let mut count = 0usize;
    for ((x, y), a) in windows {
        pair_counts[x * n_states + y] += 1;
        k.get_mut(x, y).iter_mut().zip(a).for_each(|(s, v)| *s += v);
        count += 1;
    }
    let n = count as f64;
    let k = FluxField::from_flat(n_states, dim, k.as_slice().iter().map(|v| v / n).collect()).expect("shape preserved");
    EmpiricalPair { k, pair_counts, windows: count }
}

/// `K^n = n^{-1} Σ 𝟙_{(X_{m−1},X_m)} A_m` and `Θ^n = n^{-1} Σ 𝟙_{(X_{m−1},X_m)}`.
pub fn accumulate(embedding: &DiscreteEmbedding) -> EmpiricalPair {
    let pairs = embedding.states.windows(2).map(|w| (w[0], w[1]));
    accumulate_windows(embedding.n_states, embedding.dim(), pairs.zip(embedding.blocks.iter().map(Vec::as_slice)))
}

/// [`accumulate`] for windows detached from their path order.
pub fn accumulate_permuted(windows: &PermutedWindows) -> EmpiricalPair {
    accumulate_windows(windows.n_states, windows.dim, windows.pairs.iter().copied().zip(windows.blocks.iter().map(Vec::as_slice)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{invariant_measure, validate_generator};
    use crate::rng::{stream, Domain};
    use approx::assert_abs_diff_eq;

    fn sym2() -> GeneratorMatrix {
        validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap()
    }

    fn three() -> GeneratorMatrix {
        GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1.0, 2.0], vec![0.5, 0.0, 1.0], vec![3.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn unit_rate_jump_count() {
        let sim = Simulator::new(&sym2());
        let paths = 100_000;
        let total: usize = (0..paths).map(|i| sim.path(0, 2.0, &mut stream(1, Domain::Test, 0, i)).unwrap().n_jumps()).sum();
        let mean = total as f64 / paths as f64;
        assert!((mean / 2.0 - 1.0).abs() < 0.01, "mean jumps {mean}");
    }

    #[test]
    fn tiny_horizon_rarely_jumps() {
        let sim = Simulator::new(&sym2());
        let jumped = (0..10_000).filter(|&i| sim.path(1, 1e-6, &mut stream(2, Domain::Test, 0, i)).unwrap().n_jumps() > 0).count();
        assert!(jumped <= 2);
    }

    #[test]
    fn paths_are_valid() {
        let sim = Simulator::new(&three());
        for i in 0..200 {
            let p = sim.path(i as usize % 3, 5.0, &mut stream(3, Domain::Test, 0, i)).unwrap();
            assert!(p.is_valid());
        }
    }

    #[test]
    fn absorbing_state_is_rejected() {
        let q = GeneratorMatrix::from_off_diagonal(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let err = gillespie(&q, 1, 1.0, &mut stream(0, Domain::Test, 0, 0)).unwrap_err();
        assert_eq!(err, Error::AbsorbingState(1));
    }

    #[test]
    fn occupation_examples() {
        let still = PathRecord { n_states: 2, initial: 1, jumps: vec![], horizon: 3.0 };
        assert_eq!(occupation(&still, 3.0).unwrap().as_slice(), &[0.0, 1.0]);
        let half = PathRecord { n_states: 2, initial: 0, jumps: vec![(1.5, 1)], horizon: 3.0 };
        assert_eq!(occupation(&half, 3.0).unwrap().as_slice(), &[0.5, 0.5]);

        let q = three();
        let pi = invariant_measure(&q).unwrap();
        let long = gillespie(&q, 0, 1000.0, &mut stream(4, Domain::Test, 0, 0)).unwrap();
        let occ = occupation(&long, 1000.0).unwrap();
        assert!(occ.sup_distance(&pi) < 0.02);
    }

    #[test]
    fn flux_examples() {
        let still = PathRecord { n_states: 2, initial: 1, jumps: vec![], horizon: 3.0 };
        assert_eq!(cumulative_flux(&still).total(), 0);
        let back_forth = PathRecord { n_states: 2, initial: 0, jumps: vec![(1.0, 1), (2.0, 0)], horizon: 3.0 };
        let w = cumulative_flux(&back_forth);
        assert_eq!((w.get(0, 1), w.get(1, 0), w.total()), (1, 1, 2));

        // unit two-state chain: jump counts are Poisson(T), so 2% is two standard deviations
        let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let pi = invariant_measure(&q).unwrap();
        let t = 10_000.0;
        let long = gillespie(&q, 0, t, &mut stream(5, Domain::Test, 0, 0)).unwrap();
        let j = cumulative_flux(&long).per_time(t);
        for x in 0..2 {
            for y in 0..2 {
                if x != y {
                    let expect = pi[x] * q.rate(x, y);
                    assert!((j.get(x, y) / expect - 1.0).abs() < 0.02, "({x},{y}) {} vs {expect}", j.get(x, y));
                }
            }
        }
    }

    #[test]
    fn embedding_partitions_the_ergodic_average() {
        let q = three();
        let path = gillespie(&q, 2, 50.0 * 0.7, &mut stream(6, Domain::Test, 0, 0)).unwrap();
        for mode in [LawMode::Occupation, LawMode::Flux] {
            let e = discrete_embedding(&path, 0.7, mode).unwrap();
            assert_eq!(e.n_windows(), 50);
            assert_eq!(e.states.len(), 51);
            let avg = e.ergodic_average();
            let occ = occupation(&path, path.horizon).unwrap();
            for x in 0..3 {
                assert_abs_diff_eq!(avg[x], occ[x], epsilon = 1e-12);
            }
            if mode == LawMode::Flux {
                let w = cumulative_flux(&path).per_time(path.horizon);
                for i in 0..9 {
                    assert_abs_diff_eq!(avg[3 + i], w.as_slice()[i], epsilon = 1e-12);
                }
            }
            for b in &e.blocks {
                assert_abs_diff_eq!(b[..3].iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_window_is_the_occupation() {
        let path = gillespie(&three(), 0, 1.3, &mut stream(7, Domain::Test, 0, 0)).unwrap();
        let e = discrete_embedding(&path, 1.3, LawMode::Occupation).unwrap();
        let occ = occupation(&path, 1.3).unwrap();
        assert_eq!(e.blocks.len(), 1);
        for x in 0..3 {
            assert_abs_diff_eq!(e.blocks[0][x], occ[x], epsilon = 1e-15);
        }
        assert!(discrete_embedding(&path, 0.5, LawMode::Occupation).is_err());
    }

    #[test]
    fn accumulators() {
        let path = gillespie(&three(), 1, 200.0, &mut stream(8, Domain::Test, 0, 0)).unwrap();
        let e = discrete_embedding(&path, 1.0, LawMode::Flux).unwrap();
        let acc = accumulate(&e);
        assert_eq!(acc.pair_counts.iter().sum::<u64>(), 200);
        let total = acc.k.total();
        let avg = e.ergodic_average();
        for (a, b) in total.iter().zip(&avg) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let theta = acc.theta();
        let e1 = theta.first_marginal();
        let e2 = theta.second_marginal();
        let tv: f64 = e1.iter().zip(&e2).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 2.0 / 200.0 + 1e-15);
    }
}
