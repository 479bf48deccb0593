//! Dense row-major matrices and the handful of kernels the layers need.
//!
//! Every kernel computes each output element with a fixed, ascending
//! summation order, so results are bitwise reproducible and independent of
//! which subset of rows a caller asks for.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    /// Copies the listed rows into a new `ids.len() × cols` block.
    pub fn gather_rows(&self, ids: &[usize]) -> Matrix<T> {
        let mut out = Matrix::zeros(ids.len(), self.cols);
        for (i, &v) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(v));
        }
        out
    }

    /// Writes row `i` of `block` into row `ids[i]` of `self`.
    pub fn scatter_rows(&mut self, ids: &[usize], block: &Matrix<T>) {
        debug_assert_eq!(ids.len(), block.rows);
        debug_assert_eq!(self.cols, block.cols);
        for (i, &v) in ids.iter().enumerate() {
            self.row_mut(v).copy_from_slice(block.row(i));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// `a · b`, computed row by row.
    pub fn matmul(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, b.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, b.cols);
        for r in 0..self.rows {
            row_times(self.row(r), b, out.row_mut(r));
        }
        out
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, b.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, b.rows);
        for r in 0..self.rows {
            row_times_t(self.row(r), b, out.row_mut(r));
        }
        out
    }

    /// `aᵀ · b`, summing over rows in ascending order.
    pub fn t_matmul(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.rows, b.rows, "t_matmul row count");
        let mut out = Matrix::zeros(self.cols, b.cols);
        accumulate_t_matmul(self, b, 0..self.rows, &mut out);
        out
    }
}

/// `out = x · w` for a single row vector `x`.
#[inline]
pub fn row_times<T: Real>(x: &[T], w: &Matrix<T>, out: &mut [T]) {
    debug_assert_eq!(x.len(), w.rows);
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &xk) in x.iter().enumerate() {
        if xk == T::zero() {
            continue;
        }
        for (o, &wk) in out.iter_mut().zip(w.row(k)) {
            *o = *o + xk * wk;
        }
    }
}

/// `out = g · wᵀ` for a single row vector `g`.
#[inline]
pub fn row_times_t<T: Real>(g: &[T], w: &Matrix<T>, out: &mut [T]) {
    debug_assert_eq!(g.len(), w.cols);
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (&gj, &wj) in g.iter().zip(w.row(k)) {
            acc = acc + gj * wj;
        }
        *o = acc;
    }
}

/// `out += Σ_{r ∈ rows} a[r]ᵀ · b[r]`, rows visited in the given order.
pub fn accumulate_t_matmul<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    rows: impl IntoIterator<Item = usize>,
    out: &mut Matrix<T>,
) {
    debug_assert_eq!(out.rows, a.cols);
    debug_assert_eq!(out.cols, b.cols);
    for r in rows {
        let ar = a.row(r);
        let br = b.row(r);
        for (k, &ak) in ar.iter().enumerate() {
            if ak == T::zero() {
                continue;
            }
            for (o, &bj) in out.row_mut(k).iter_mut().zip(br) {
                *o = *o + ak * bj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_against_hand_values() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c: Matrix<f64> = a.matmul(&b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
        let bt = Matrix::from_fn(2, 3, |r, c| b.get(c, r));
        assert_eq!(a.matmul_t(&bt), c);
        let at = Matrix::from_fn(3, 2, |r, c| a.get(c, r));
        assert_eq!(at.t_matmul(&b), c);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::<f32>::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gather_scatter_inverse() {
        let m = Matrix::<f32>::from_fn(4, 2, |r, c| (r * 2 + c) as f32);
        let ids = [3, 1];
        let block = m.gather_rows(&ids);
        let mut z = Matrix::zeros(4, 2);
        z.scatter_rows(&ids, &block);
        assert_eq!(z.row(3), m.row(3));
        assert_eq!(z.row(0), &[0.0, 0.0]);
    }
}
