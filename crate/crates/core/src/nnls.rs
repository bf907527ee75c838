//! Nonnegative least squares by the Lawson-Hanson active-set method.
//!
//! Problems are given in normal-equation form: minimize
//! `x' G x / 2 - b' x` over `x >= 0` with `G` symmetric positive
//! semidefinite. For the small systems met here (one unknown per basis
//! function) this is cheaper than working with the full design matrix.

use crate::linalg::{solve_spd, Matrix};
use crate::scalar::Scalar;

/// Relative tolerance on the KKT residual `max_j (b - G x)_j` over the
/// inactive set.
pub const KKT_TOLERANCE: f64 = 1e-10;

/// Solution and diagnostics of one NNLS solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution<T> {
    pub x: Vec<T>,
    /// Largest positive gradient component left on the zero set.
    pub kkt_residual: T,
    pub iterations: usize,
}

/// Solves `min_{x >= 0} x' G x / 2 - b' x`.
///
/// Columns whose passive subproblem is singular (collinear basis members)
/// are left at zero.
pub fn nnls_gram<T: Scalar>(gram: &Matrix<T>, b: &[T]) -> NnlsSolution<T> {
    let n = b.len();
    assert_eq!(gram.rows(), n, "gram matrix and right-hand side disagree");
    let scale = b.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = T::of(KKT_TOLERANCE).max(T::epsilon() * T::of(64.0)) * scale.max(T::min_positive_value());

    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    let mut excluded = vec![false; n];
    let max_outer = 3 * n + 10;
    let mut iterations = 0;

    let gradient = |x: &[T]| -> Vec<T> {
        (0..n).map(|i| b[i] - crate::linalg::dot(gram.row(i), x)).collect()
    };

    for _ in 0..max_outer {
        let w = gradient(&x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !excluded[j] && w[j] > tol)
            .fold(None, |best: Option<usize>, j| match best {
                Some(k) if w[k] >= w[j] => Some(k),
                _ => Some(j),
            });
        let Some(t) = candidate else { break };
        passive[t] = true;

        loop {
            iterations += 1;
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z = match solve_passive(gram, b, &idx) {
                Some(z) => z,
                None => {
                    passive[t] = false;
                    excluded[t] = true;
                    x[t] = T::zero();
                    break;
                }
            };
            if z.iter().all(|&v| v > T::zero()) {
                for (&j, &v) in idx.iter().zip(&z) {
                    x[j] = v;
                }
                break;
            }
            // step back toward the feasible set
            let mut step: Option<(T, usize)> = None;
            for (&j, &v) in idx.iter().zip(&z) {
                if v <= T::zero() {
                    let a = x[j] / (x[j] - v);
                    if step.is_none_or(|(best, _)| a < best) {
                        step = Some((a, j));
                    }
                }
            }
            let (alpha, blocking) = step.expect("some passive coefficient is nonpositive");
            for (&j, &v) in idx.iter().zip(&z) {
                let xj = x[j];
                x[j] = xj + alpha * (v - xj);
                if j == blocking || x[j] <= T::zero() {
                    x[j] = T::zero();
                    passive[j] = false;
                }
            }
            if idx.iter().all(|&j| !passive[j]) || iterations > 10 * max_outer {
                break;
            }
        }
        if iterations > 10 * max_outer {
            break;
        }
    }
    let w = gradient(&x);
    let kkt_residual = (0..n)
        .filter(|&j| !passive[j])
        .fold(T::zero(), |m, j| m.max(w[j]));
    NnlsSolution { x, kkt_residual, iterations }
}

fn solve_passive<T: Scalar>(gram: &Matrix<T>, b: &[T], idx: &[usize]) -> Option<Vec<T>> {
    let k = idx.len();
    let mut sub = Matrix::zeros(k, k);
    for (a, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            sub.set(a, c, gram.get(i, j));
        }
    }
    // Reject nearly collinear subsets before they produce huge coefficients.
    let diag_max = idx.iter().fold(T::zero(), |m, &i| m.max(gram.get(i, i)));
    let rhs: Vec<T> = idx.iter().map(|&i| b[i]).collect();
    let z = solve_spd(sub.clone(), &rhs)?;
    let check = sub.mul_vec(&z);
    let err = check.iter().zip(&rhs).fold(T::zero(), |m, (a, r)| m.max((*a - *r).abs()));
    let bmax = rhs.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let ok = z.iter().all(|v| v.is_finite())
        && err <= T::of(1e-6).max(T::epsilon().sqrt()) * (bmax + diag_max);
    ok.then_some(z)
}
