//! Dense row-major matrices and the Cholesky machinery behind kriging.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Only the lower triangle of the input is read. The strict upper triangle of
/// the factor is left at zero.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    factor: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Returns `None` when a pivot is not strictly positive.
    pub fn new(mut a: Matrix<T>) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky needs a square matrix");
        for i in 0..n {
            for j in 0..=i {
                let (head, tail) = a.data.split_at_mut(i * n);
                let row_i = &mut tail[..n];
                let s = if j == i {
                    row_i[j] - dot(&row_i[..j], &row_i[..j])
                } else {
                    let row_j = &head[j * n..j * n + n];
                    (row_i[j] - dot(&row_i[..j], &row_j[..j])) / row_j[j]
                };
                if j == i {
                    if !(s > T::zero()) || !s.is_finite() {
                        return None;
                    }
                    row_i[i] = s.sqrt();
                } else {
                    row_i[j] = s;
                }
            }
            for v in &mut a.row_mut(i)[i + 1..] {
                *v = T::zero();
            }
        }
        Some(Self { factor: a })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.factor
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let l = &self.factor;
        for i in 0..l.rows() {
            let row = l.row(i);
            b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let l = &self.factor;
        for i in (0..l.rows()).rev() {
            let row = l.row(i);
            b[i] /= row[i];
            let xi = b[i];
            for (bk, &lik) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lik * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::of(2.0);
        (0..self.dim()).map(|i| self.factor.get(i, i).ln()).sum::<T>() * two
    }
}

/// Solves a small symmetric positive definite system.
pub fn solve_spd<T: Scalar>(a: Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    Cholesky::new(a).map(|c| c.solve(b))
}
