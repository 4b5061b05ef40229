//! Dense row-major `f64` matrices and the handful of kernels the model needs.
//!
//! Every floating-point loop in the crate bottoms out here: blocked GEMM in
//! three transpose flavours, row-wise L2 normalization, row softmax and the
//! scalar activations.

use std::fmt;

use crate::error::{shape_err, Error, Result};

/// Default square tile edge used by the blocked GEMM kernels.
pub const DEFAULT_TILE: usize = 32;

/// Default guard added under the square root of row norms.
pub const DEFAULT_NORM_EPS: f64 = 1e-6;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols))
                .finish()?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(shape_err!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return Err(shape_err!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Copy of columns `start..start + width`.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        assert!(start + width <= self.cols);
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Write `block` into columns `start..start + block.cols()`.
    pub fn set_columns(&mut self, start: usize, block: &Matrix) {
        assert_eq!(block.rows, self.rows);
        assert!(start + block.cols <= self.cols);
        for i in 0..self.rows {
            self.row_mut(i)[start..start + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `A · B` with the default tile size.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm_tiled(a, b, DEFAULT_TILE)
}

pub fn gemm_tiled(a: &Matrix, b: &Matrix, tile: usize) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err!(
            "gemm: {}x{} times {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm_acc(a, b, &mut out, tile.max(1));
    Ok(out)
}

/// `out += A · B`, blocked i-k-j so the innermost loop streams rows of B.
pub(crate) fn gemm_acc(a: &Matrix, b: &Matrix, out: &mut Matrix, tile: usize) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.shape(), (a.rows, b.cols));
    let (r, k, c) = (a.rows, a.cols, b.cols);
    for i0 in (0..r).step_by(tile) {
        let i1 = (i0 + tile).min(r);
        for p0 in (0..k).step_by(tile) {
            let p1 = (p0 + tile).min(k);
            for j0 in (0..c).step_by(tile) {
                let j1 = (j0 + tile).min(c);
                for i in i0..i1 {
                    let a_row = &a.data[i * k..(i + 1) * k];
                    let out_row = &mut out.data[i * c + j0..i * c + j1];
                    for (p, &a_ip) in a_row.iter().enumerate().take(p1).skip(p0) {
                        if a_ip == 0.0 {
                            continue;
                        }
                        axpy(a_ip, &b.data[p * c + j0..p * c + j1], out_row);
                    }
                }
            }
        }
    }
}

/// `Aᵀ · B` without materializing the transpose.
pub fn gemm_at_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(shape_err!(
            "gemm_at_b: ({}x{})ᵀ times {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    gemm_at_b_acc(a, b, &mut out);
    Ok(out)
}

pub(crate) fn gemm_at_b_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(out.shape(), (a.cols, b.cols));
    let c = b.cols;
    for i in 0..a.rows {
        let b_row = b.row(i);
        for (p, &a_ip) in a.row(i).iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            axpy(a_ip, b_row, &mut out.data[p * c..(p + 1) * c]);
        }
    }
}

/// `A · Bᵀ` as row-by-row dot products, blocked over both operands' rows.
pub fn gemm_a_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(shape_err!(
            "gemm_a_bt: {}x{} times ({}x{})ᵀ",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm_a_bt_acc(a, b, &mut out, DEFAULT_TILE);
    Ok(out)
}

pub(crate) fn gemm_a_bt_acc(a: &Matrix, b: &Matrix, out: &mut Matrix, tile: usize) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!(out.shape(), (a.rows, b.rows));
    let n = b.rows;
    for i0 in (0..a.rows).step_by(tile) {
        let i1 = (i0 + tile).min(a.rows);
        for j0 in (0..n).step_by(tile) {
            let j1 = (j0 + tile).min(n);
            for i in i0..i1 {
                let a_row = a.row(i);
                for j in j0..j1 {
                    out.data[i * n + j] += dot(a_row, b.row(j));
                }
            }
        }
    }
}

/// Row norm `sqrt(Σ x² + eps)`.
#[inline]
pub fn guarded_norm(row: &[f64], eps: f64) -> f64 {
    (dot(row, row) + eps).sqrt()
}

/// Divide each row by `sqrt(Σ_j M[i,j]² + eps)`.
pub fn row_l2_normalize(m: &Matrix, eps: f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let inv = 1.0 / guarded_norm(row, eps);
        row.iter_mut().for_each(|x| *x *= inv);
    }
    out
}

/// Numerically stable row softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::Numeric("softmax_rows: non-finite input".into()));
    }
    let mut out = m.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    Ok(out)
}

/// Softmax of one row in place. A row of all `-inf` becomes all zeros.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}

#[inline]
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
