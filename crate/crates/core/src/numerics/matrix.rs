//! Row-major `batch × features` matrix used by the dense engine.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

    /// Wraps a flat row-major buffer. Panics if the length disagrees with the shape.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix buffer length does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn from_row(row: &[f64]) -> Self {
        Self::from_vec(1, row.len(), row.to_vec())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        assert!(start + width <= self.cols);
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = x · wᵀ` where `x` is `n × k` and `w` is `m × k` row-major; `out` is `n × m`.
pub(crate) fn matmul_xwt(x: &[f64], w: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    assert!(x.len() == n * k && w.len() == m * k && out.len() == n * m);
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        out.fill(0.0);
        return;
    }
    // SAFETY: slice lengths were checked against the strides above.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `out += gᵀ · x` where `g` is `n × m` and `x` is `n × k`; `out` is `m × k`.
pub(crate) fn matmul_gt_x_acc(g: &[f64], x: &[f64], n: usize, m: usize, k: usize, out: &mut [f64]) {
    assert!(g.len() == n * m && x.len() == n * k && out.len() == m * k);
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    // SAFETY: slice lengths were checked against the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            g.as_ptr(),
            1,
            m as isize,
            x.as_ptr(),
            k as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `out = g · w` where `g` is `n × m` and `w` is `m × k`; `out` is `n × k`.
pub(crate) fn matmul_g_w(g: &[f64], w: &[f64], n: usize, m: usize, k: usize, out: &mut [f64]) {
    assert!(g.len() == n * m && w.len() == m * k && out.len() == n * k);
    if n == 0 || k == 0 {
        return;
    }
    if m == 0 {
        out.fill(0.0);
        return;
    }
    // SAFETY: slice lengths were checked against the strides above.
    unsafe {
        matrixmultiply::dgemm(
            n,
            m,
            k,
            1.0,
            g.as_ptr(),
            m as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}
