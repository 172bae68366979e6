//! Box-constrained maximization of smooth concave functions.
//!
//! Projected Newton with an active set: coordinates pinned at the box with an
//! outward gradient are frozen, the Newton system is solved on the rest by
//! eigendecomposition. Directions of (numerically) zero curvature are either
//! ignored (gradient below tolerance there, the objective is flat) or followed
//! all the way to the box (the objective grows linearly, so the supremum sits at
//! the boundary or at infinity).

use nalgebra::{DMatrix, SymmetricEigen};

/// A concave objective with value, gradient and Hessian.
pub trait ConcaveObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Returns `(value, gradient, hessian)`.
    fn derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct BoxSettings {
    pub bound: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct BoxMaximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub converged: bool,
    pub at_boundary: bool,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn at_upper(x: f64, bound: f64) -> bool {
    x >= bound * (1.0 - 1e-12)
}

fn at_lower(x: f64, bound: f64) -> bool {
    x <= -bound * (1.0 - 1e-12)
}

/// Sup-norm of the gradient after discarding components that push out of the box.
fn projected_grad_norm(x: &[f64], g: &[f64], bound: f64) -> f64 {
    x.iter()
        .zip(g)
        .filter(|(xi, gi)| !((at_upper(**xi, bound) && **gi > 0.0) || (at_lower(**xi, bound) && **gi < 0.0)))
        .fold(0.0, |m, (_, gi)| m.max(gi.abs()))
}

fn newton_direction(x: &[f64], g: &[f64], h: &DMatrix<f64>, s: &BoxSettings) -> Vec<f64> {
    let d = x.len();
    let free: Vec<usize> =
        (0..d).filter(|&i| !((at_upper(x[i], s.bound) && g[i] > 0.0) || (at_lower(x[i], s.bound) && g[i] < 0.0))).collect();
    let mut dir = vec![0.0; d];
    if free.is_empty() {
        return dir;
    }
    let nf = free.len();
    // curvature of the concave objective: -H restricted to the free block, PSD
    let neg_h = DMatrix::from_fn(nf, nf, |i, j| -h[(free[i], free[j])]);
    let eig = SymmetricEigen::new(neg_h);
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
    let flat = 1e-12 * top.max(1.0);
    let far = 4.0 * s.bound * (d as f64).sqrt();
    for k in 0..nf {
        let u = eig.eigenvectors.column(k);
        let c: f64 = (0..nf).map(|i| u[i] * g[free[i]]).sum();
        let mu = eig.eigenvalues[k];
        let step = if mu > flat {
            c / mu
        } else if c.abs() > s.grad_tol {
            c.signum() * far
        } else {
            0.0
        };
        for i in 0..nf {
            dir[free[i]] += step * u[i];
        }
    }
    dir
}

fn clamp_step(x: &[f64], dir: &[f64], t: f64, bound: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(xi, di)| (xi + t * di).clamp(-bound, bound)).collect()
}

/// Maximizes a concave objective over `[-bound, bound]^d` starting from `x0`.
pub fn maximize_concave_box<F: ConcaveObjective + ?Sized>(f: &F, x0: &[f64], s: &BoxSettings) -> BoxMaximum {
    debug_assert_eq!(x0.len(), f.dim());
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(-s.bound, s.bound)).collect();
    let (mut value, mut grad, mut hess) = f.derivatives(&x);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < s.max_iter {
        if projected_grad_norm(&x, &grad, s.bound) <= s.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = newton_direction(&x, &grad, &hess, s);
        let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if !(slope > 0.0) {
            // fall back to projected steepest ascent
            dir = grad.clone();
        }
        let predicted: f64 = clamp_step(&x, &dir, 1.0, s.bound).iter().zip(&x).zip(&grad).map(|((c, xi), gi)| (c - xi) * gi).sum();
        if predicted <= 1e-15 * value.abs().max(1.0) {
            // the remaining gain is below round-off
            converged = projected_grad_norm(&x, &grad, s.bound) <= s.grad_tol.sqrt();
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = clamp_step(&x, &dir, t, s.bound);
            let gain: f64 = cand.iter().zip(&x).zip(&grad).map(|((c, xi), gi)| (c - xi) * gi).sum();
            let v = f.value(&cand);
            // a step that leaves the value unchanged is round-off, not ascent
            if v.is_finite() && v >= value + ARMIJO * gain && v > value {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent possible at machine precision
            converged = projected_grad_norm(&x, &grad, s.bound) <= s.grad_tol.sqrt();
            break;
        };
        let moved = next.iter().zip(&x).any(|(a, b)| a != b);
        x = next;
        (value, grad, hess) = f.derivatives(&x);
        if !moved {
            converged = projected_grad_norm(&x, &grad, s.bound) <= s.grad_tol.sqrt();
            break;
        }
    }
    if !converged && projected_grad_norm(&x, &grad, s.bound) <= s.grad_tol {
        converged = true;
    }
    let at_boundary = x.iter().any(|v| at_upper(*v, s.bound) || at_lower(*v, s.bound));
    BoxMaximum { x, value, grad, converged, at_boundary, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// -(x-c)^T A (x-c) / 2 with A diagonal.
    struct Quad {
        c: Vec<f64>,
        a: Vec<f64>,
    }

    impl ConcaveObjective for Quad {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn value(&self, x: &[f64]) -> f64 {
            -0.5 * x.iter().zip(&self.c).zip(&self.a).map(|((x, c), a)| a * (x - c) * (x - c)).sum::<f64>()
        }
        fn derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
            let g = x.iter().zip(&self.c).zip(&self.a).map(|((x, c), a)| -a * (x - c)).collect();
            let h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(self.a.len(), self.a.iter().map(|a| -a)));
            (self.value(x), g, h)
        }
    }

    const S: BoxSettings = BoxSettings { bound: 10.0, grad_tol: 1e-10, max_iter: 100 };

    #[test]
    fn interior_maximum() {
        let f = Quad { c: vec![1.0, -2.0], a: vec![1.0, 3.0] };
        let r = maximize_concave_box(&f, &[0.0, 0.0], &S);
        assert!(r.converged && !r.at_boundary);
        assert!((r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_maximum() {
        let f = Quad { c: vec![20.0, 0.5], a: vec![1.0, 1.0] };
        let r = maximize_concave_box(&f, &[0.0, 0.0], &S);
        assert!(r.converged && r.at_boundary);
        assert_eq!(r.x[0], 10.0);
        assert!((r.x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_direction_is_followed_only_when_sloped() {
        // value = x0 (linear, zero curvature) - (x1)^2/2
        struct Lin(f64);
        impl ConcaveObjective for Lin {
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, x: &[f64]) -> f64 {
                self.0 * x[0] - 0.5 * x[1] * x[1]
            }
            fn derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
                let mut h = DMatrix::zeros(2, 2);
                h[(1, 1)] = -1.0;
                (self.value(x), vec![self.0, -x[1]], h)
            }
        }
        let sloped = maximize_concave_box(&Lin(0.3), &[0.0, 1.0], &S);
        assert!(sloped.at_boundary && sloped.x[0] == 10.0);
        let flat = maximize_concave_box(&Lin(0.0), &[0.0, 1.0], &S);
        assert!(!flat.at_boundary && flat.x[0] == 0.0 && flat.converged);
    }
}
