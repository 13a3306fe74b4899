//! Dense helpers for the short vectors and `d x d1` matrices used by the
//! coefficient callables. Points are plain slices.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

#[inline]
pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// `scale` on the leading diagonal, zero elsewhere (rectangular allowed).
    pub fn scaled_identity(rows: usize, cols: usize, scale: T) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.set_scaled_identity(scale);
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn set_scaled_identity(&mut self, scale: T) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] = scale;
        }
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
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = dot(row, v);
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// Hilbert-Schmidt (Frobenius) norm.
    pub fn hs_norm(&self) -> T {
        norm(&self.data)
    }

    /// Entry `(i, j)` of `self * self^T`.
    pub fn gram(&self, i: usize, j: usize) -> T {
        let a = &self.data[i * self.cols..(i + 1) * self.cols];
        let b = &self.data[j * self.cols..(j + 1) * self.cols];
        dot(a, b)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }
}
