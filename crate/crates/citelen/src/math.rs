//! Dense row-major matrices and the handful of kernels the model needs.

use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<R> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![R::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<R>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        debug_assert!(rows.iter().all(|row| row.len() == c));
        Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> R {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: R) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [R] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self (m x k) * other (k x n), ikj loop order.
    pub fn matmul(&self, other: &Matrix<R>) -> Matrix<R> {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == R::zero() {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self (m x k) * other^T where other is (n x k).
    pub fn matmul_transpose_b(&self, other: &Matrix<R>) -> Matrix<R> {
        assert_eq!(self.cols, other.cols, "matmul_transpose_b shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = R::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// self^T (k x m)^T=(m x k) ... transpose of self times other:
    /// self is (k x m), other is (k x n), result (m x n).
    pub fn transpose_a_matmul(&self, other: &Matrix<R>) -> Matrix<R> {
        assert_eq!(self.rows, other.rows, "transpose_a_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (m, &a) in a_row.iter().enumerate() {
                if a == R::zero() {
                    continue;
                }
                let out_row = &mut out.data[m * other.cols..(m + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<R> {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn add(&self, other: &Matrix<R>) -> Matrix<R> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<R>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: R) -> Matrix<R> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Add `vec` to every row.
    pub fn add_row_broadcast(&mut self, vec: &[R]) {
        assert_eq!(self.cols, vec.len());
        for r in 0..self.rows {
            for (v, &b) in self.row_mut(r).iter_mut().zip(vec) {
                *v += b;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Softmax over each row, in place, numerically stabilised.
pub fn softmax_rows<R: Real>(m: &mut Matrix<R>) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// log-sum-exp of a slice.
pub fn log_sum_exp<R: Real>(row: &[R]) -> R {
    let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
    if !max.is_finite() {
        return max;
    }
    let sum: R = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_b_matches_explicit_transpose() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0]]);
        let b = Matrix::from_rows(vec![vec![1.0, 0.0, 2.0], vec![3.0, 1.0, -1.0]]);
        let fast = a.matmul_transpose_b(&b);
        let slow = a.matmul(&b.transpose());
        assert_eq!(fast, slow);
    }

    #[test]
    fn transpose_a_matmul_matches_explicit_transpose() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Matrix::from_rows(vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![-2.0, 1.0]]);
        let fast = a.transpose_a_matmul(&b);
        let slow = a.transpose().matmul(&b);
        assert_eq!(fast, slow);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]);
        softmax_rows(&mut m);
        for r in 0..m.rows {
            let s: f64 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let row: [f64; 3] = [0.3, -1.2, 2.7];
        let naive: f64 = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&row) - naive).abs() < 1e-12);
    }
}
