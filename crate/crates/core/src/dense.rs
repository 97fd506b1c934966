//! Small dense matrices over [`Real`], just enough for Cholesky-based kriging.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::real::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| T::from_f64(m[(i, j)]))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].to_f64())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn tr_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "tr_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `Wᵀ A W` for symmetric `A`, symmetrized on output.
    pub fn congruence(&self, w: &Self) -> Self {
        let aw = self.matmul(w);
        let mut out = w.tr_matmul(&aw);
        out.symmetrize();
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum()).collect()
    }

    /// `selfᵀ v`.
    pub fn tr_matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![T::zero(); self.cols];
        for (k, &vk) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(k)) {
                *o += a * vk;
            }
        }
        out
    }

    pub fn symmetrize(&mut self) {
        let half = T::from_f64(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: T) -> Self {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    /// Largest absolute entry, as `f64`.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max)
    }

    /// `Σ_ij a_ij b_ij`, i.e. `Tr(AᵀB)`.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn cholesky(&self) -> Result<Cholesky<T>, CholeskyFailure> {
        Cholesky::new(self)
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Cholesky breakdown: the first non-positive pivot and where it occurred.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CholeskyFailure {
    pub index: usize,
    pub pivot: f64,
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Mat<T>) -> Result<Self, CholeskyFailure> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky of a non-square matrix");
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d.to_f64() > 0.0) {
                return Err(CholeskyFailure { index: j, pivot: d.to_f64() });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn l(&self) -> &Mat<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Smallest diagonal entry of `L`, squared: a cheap lower-precision probe of conditioning.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim()).map(|i| self.l[(i, i)].to_f64().powi(2)).fold(f64::INFINITY, f64::min)
    }

    pub fn log_det(&self) -> T {
        let two = T::from_f64(2.0);
        (0..self.dim()).map(|i| self.l[(i, i)].ln() * two).sum()
    }

    /// Solves `L x = b` in place.
    pub fn forward(&self, b: &mut [T]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward(&self, b: &mut [T]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `L⁻¹ B`.
    pub fn forward_mat(&self, b: &Mat<T>) -> Mat<T> {
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let mut col = b.column(j);
            self.forward(&mut col);
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// `A⁻¹ B`.
    pub fn solve_mat(&self, b: &Mat<T>) -> Mat<T> {
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.column(j));
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat<T> {
        let mut inv = self.solve_mat(&Mat::identity(self.dim()));
        inv.symmetrize();
        inv
    }

    /// `L⁻¹ A L⁻ᵀ` for symmetric `A`, the whitened form of a pencil `(A, LLᵀ)`.
    pub fn whiten(&self, a: &Mat<T>) -> Mat<T> {
        let x = self.forward_mat(a);
        let mut y = self.forward_mat(&x.transpose());
        y.symmetrize();
        y
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &[T]) -> T {
        let mut x = b.to_vec();
        self.forward(&mut x);
        x.iter().map(|&v| v * v).sum()
    }
}
