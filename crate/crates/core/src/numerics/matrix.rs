//! Dense row-major matrices of `f64`.
//!
//! Vectors are represented as `1 x n` matrices; a batch of vectors stacks
//! them as rows. Matrix products go through `matrixmultiply::dgemm`, which
//! takes explicit strides so transposed operands never need to be copied.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MastError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MastError::DimensionMismatch {
                context: "Matrix::from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("{} values", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// A `1 x n` matrix holding `values`.
    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MastError::DimensionMismatch {
                    context: "Matrix::from_rows",
                    left: format!("row of {cols}"),
                    right: format!("row of {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Same data, new shape. Panics if the element count changes.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len(), "reshape must keep size");
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `x · wᵀ` for `x: B x I` and `w: O x I`, giving `B x O`.
    pub fn matmul_t(&self, w: &Matrix) -> Result<Matrix> {
        if self.cols != w.cols {
            return Err(MastError::shapes("matmul_t", self.shape(), w.shape()));
        }
        let mut out = Matrix::zeros(self.rows, w.rows);
        gemm_nt(self, w, &mut out, 0.0);
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Strided dgemm: `c = alpha·a·b + beta·c` with `a: m x k`, `b: k x n`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: callers pass slices whose extents cover every (row, col)
    // addressed by the given dims and strides; checked by debug asserts.
    debug_assert!(a.len() >= (m - 1) * rsa as usize + (k - 1) * csa as usize + 1);
    debug_assert!(b.len() >= (k - 1) * rsb as usize + (n - 1) * csb as usize + 1);
    debug_assert!(c.len() >= (m - 1) * rsc as usize + (n - 1) * csc as usize + 1);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// `out = x · wᵀ + beta·out` where `x: B x I`, `w: O x I`.
pub(crate) fn gemm_nt(x: &Matrix, w: &Matrix, out: &mut Matrix, beta: f64) {
    let (b, i) = x.shape();
    let o = w.rows;
    gemm(
        b,
        i,
        o,
        &x.data,
        i as isize,
        1,
        &w.data,
        1,
        i as isize,
        beta,
        &mut out.data,
        o as isize,
        1,
    );
}

/// `out = dy · w + beta·out` where `dy: B x O`, `w: O x I`.
pub(crate) fn gemm_nn(dy: &Matrix, w: &Matrix, out: &mut Matrix, beta: f64) {
    let (b, o) = dy.shape();
    let i = w.cols;
    gemm(
        b,
        o,
        i,
        &dy.data,
        o as isize,
        1,
        &w.data,
        i as isize,
        1,
        beta,
        &mut out.data,
        i as isize,
        1,
    );
}

/// `out = dyᵀ · x + beta·out` where `dy: B x O`, `x: B x I`.
pub(crate) fn gemm_tn(dy: &Matrix, x: &Matrix, out: &mut Matrix, beta: f64) {
    let (b, o) = dy.shape();
    let i = x.cols;
    gemm(
        o,
        b,
        i,
        &dy.data,
        1,
        o as isize,
        &x.data,
        i as isize,
        1,
        beta,
        &mut out.data,
        i as isize,
        1,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul_t(x: &Matrix, w: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), w.rows());
        for b in 0..x.rows() {
            for o in 0..w.rows() {
                let mut acc = 0.0;
                for i in 0..x.cols() {
                    acc += x.get(b, i) * w.get(o, i);
                }
                out.set(b, o, acc);
            }
        }
        out
    }

    #[test]
    fn strided_products_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::uniform(4, 7, 1.0, &mut rng);
        let w = Matrix::uniform(5, 7, 1.0, &mut rng);
        let y = x.matmul_t(&w).unwrap();
        let expect = naive_matmul_t(&x, &w);
        for (a, b) in y.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        let dy = Matrix::uniform(4, 5, 1.0, &mut rng);
        let mut dx = Matrix::zeros(4, 7);
        gemm_nn(&dy, &w, &mut dx, 0.0);
        let dx_naive = naive_matmul_t(&dy, &w.transpose());
        for (a, b) in dx.as_slice().iter().zip(dx_naive.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }

        let mut dw = Matrix::zeros(5, 7);
        gemm_tn(&dy, &x, &mut dw, 0.0);
        let dw_naive = naive_matmul_t(&dy.transpose(), &x.transpose());
        for (a, b) in dw.as_slice().iter().zip(dw_naive.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let x = Matrix::zeros(1, 3);
        let w = Matrix::zeros(2, 4);
        let err = x.matmul_t(&w).unwrap_err().to_string();
        assert!(err.contains("1x3") && err.contains("2x4"), "{err}");
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
