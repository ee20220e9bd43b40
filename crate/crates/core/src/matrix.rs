//! Row-major dense matrix of `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{size_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(size_err!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; an empty-column matrix has no row data to yield
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns `Err(NonFinite)` naming `stage` if any entry is NaN or infinite.
    pub fn ensure_finite(&self, stage: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { stage })
        }
    }

    /// Copies the first `cols` columns of every row into a new matrix,
    /// zero-padding when `cols` exceeds the current width.
    pub fn resize_cols(&self, cols: usize) -> Self {
        let mut out = Self::zeros(self.rows, cols);
        let keep = cols.min(self.cols);
        for r in 0..self.rows {
            out.row_mut(r)[..keep].copy_from_slice(&self.row(r)[..keep]);
        }
        out
    }

    /// `self · rhs` through the blocked GEMM backend.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(size_err!(
                "matmul {}x{} by {}x{}",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(
            1.0,
            self.data(),
            (self.rows, self.cols),
            false,
            rhs.data(),
            rhs.cols,
            false,
            0.0,
            out.data_mut(),
        );
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(size_err!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(
            1.0,
            self.data(),
            (self.rows, self.cols),
            false,
            rhs.data(),
            rhs.rows,
            true,
            0.0,
            out.data_mut(),
        );
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(size_err!(
                "t_matmul ({}x{})ᵀ by {}x{}",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            1.0,
            self.data(),
            (self.cols, self.rows),
            true,
            rhs.data(),
            rhs.cols,
            false,
            0.0,
            out.data_mut(),
        );
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max |a - b| / max(max |b|, tiny)`: error relative to the scale of `other`.
    pub fn rel_diff(&self, other: &Matrix) -> f64 {
        let scale = other.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
        self.max_abs_diff(other) / scale.max(f64::MIN_POSITIVE)
    }
}

/// `c = alpha · op(a) · op(b) + beta · c` on raw row-major slices.
///
/// `a_shape` is the shape of `op(a)` (m×k); `n` is the column count of
/// `op(b)`. Transposition is expressed through strides so no copy is made.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    alpha: f64,
    a: &[f64],
    a_shape: (usize, usize),
    a_t: bool,
    b: &[f64],
    n: usize,
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (m, k) = a_shape;
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides above describe exactly the m×k and k×n row-major
    // buffers whose lengths were asserted, and `c` is a distinct m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn matmul_variants_agree_with_triple_loop() {
        let a = Matrix::from_fn(3, 5, |r, c| (r * 7 + c * 3) as f64 * 0.1 - 1.0);
        let b = Matrix::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 0.37);
        let want = naive(&a, &b);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&want) < 1e-12);
        assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&want) < 1e-12);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        assert!(Matrix::from_vec(2, 2, alloc::vec![1.0; 3]).is_err());
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn resize_pads_and_truncates() {
        let a = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let p = a.resize_cols(4);
        assert_eq!(p.row(1), &[3.0, 4.0, 5.0, 0.0]);
        assert_eq!(p.resize_cols(2).row(1), &[3.0, 4.0]);
    }
}
