//! Dense complex vectors and matrices, LU solves, a unitary DFT and a
//! Hermitian eigensolver.
//!
//! Everything here is dense: the largest spaces handled by the crate are a
//! few thousand amplitudes, where cache-friendly row-major loops beat any
//! sparse bookkeeping.

use std::ops::{Index, IndexMut};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{IsmError, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Complex column vector.
#[derive(Clone, Debug, PartialEq)]
pub struct CVec {
    data: Vec<C64>,
}

impl CVec {
    pub fn new(data: Vec<C64>) -> Self {
        Self { data }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![ZERO; dim])
    }

    /// Unit vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[k] = ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `<self|other>`, antilinear in `self`.
    pub fn dot(&self, other: &CVec) -> C64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(&other.data)
            .fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: C64) -> CVec {
        CVec::new(self.data.iter().map(|z| z * s).collect())
    }

    pub fn scale_real(&self, s: f64) -> CVec {
        CVec::new(self.data.iter().map(|z| z * s).collect())
    }

    pub fn add(&self, other: &CVec) -> CVec {
        CVec::new(self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &CVec) -> CVec {
        CVec::new(self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect())
    }

    /// `a * x + b * y` for real weights.
    pub fn combine(a: f64, x: &CVec, b: f64, y: &CVec) -> CVec {
        CVec::new(
            x.data
                .iter()
                .zip(&y.data)
                .map(|(p, q)| p * a + q * b)
                .collect(),
        )
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: C64, other: &CVec) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn max_abs_diff(&self, other: &CVec) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for CVec {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for CVec {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

impl FromIterator<C64> for CVec {
    fn from_iter<T: IntoIterator<Item = C64>>(iter: T) -> Self {
        CVec::new(iter.into_iter().collect())
    }
}

/// Row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IsmError::DimensionMismatch {
                context: "matrix storage",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Reinterprets a vector of length `n*n` as a row-major square matrix.
    pub fn from_cvec_square(v: &CVec) -> Result<Self> {
        let n = (v.dim() as f64).sqrt().round() as usize;
        if n * n != v.dim() {
            return Err(IsmError::DimensionMismatch {
                context: "square reshape",
                expected: n * n,
                found: v.dim(),
            });
        }
        Self::from_vec(n, n, v.as_slice().to_vec())
    }

    pub fn to_cvec(&self) -> CVec {
        CVec::new(self.data.clone())
    }

    pub fn into_cvec(self) -> CVec {
        CVec::new(self.data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &CMat) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: C64, other: &CMat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![ZERO; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == ZERO {
                    continue;
                }
                let brow = &other.data[k * p..(k + 1) * p];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        CMat {
            rows: n,
            cols: p,
            data: out,
        }
    }

    /// `self * other^†`
    pub fn matmul_adjoint(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.cols, "matmul dimension mismatch");
        let (n, m, p) = (self.rows, self.cols, other.rows);
        let mut out = vec![ZERO; n * p];
        for i in 0..n {
            let arow = &self.data[i * m..(i + 1) * m];
            for j in 0..p {
                let brow = &other.data[j * m..(j + 1) * m];
                out[i * p + j] = arow
                    .iter()
                    .zip(brow)
                    .fold(ZERO, |acc, (a, b)| acc + a * b.conj());
            }
        }
        CMat {
            rows: n,
            cols: p,
            data: out,
        }
    }

    /// `self^† * other`
    pub fn adjoint_matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.rows, other.rows, "matmul dimension mismatch");
        let (m, n, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![ZERO; n * p];
        for k in 0..m {
            let arow = &self.data[k * n..(k + 1) * n];
            let brow = &other.data[k * p..(k + 1) * p];
            for (i, a) in arow.iter().enumerate() {
                let a = a.conj();
                if a == ZERO {
                    continue;
                }
                let orow = &mut out[i * p..(i + 1) * p];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        CMat {
            rows: n,
            cols: p,
            data: out,
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_of_product(&self, other: &CMat) -> C64 {
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self.data[i * self.cols + k] * other.data[k * other.cols + i];
            }
        }
        acc
    }

    /// `[self, other] = self*other - other*self`
    pub fn commutator(&self, other: &CMat) -> CMat {
        self.matmul(other).sub(&other.matmul(self))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn hermitian_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                r = r.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        r
    }

    /// `‖M^†M − Id‖_max`
    pub fn unitarity_residual(&self) -> f64 {
        self.adjoint_matmul(self)
            .sub(&CMat::identity(self.cols))
            .max_abs()
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.sub(other).max_abs()
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn matvec(m: &CMat, v: &CVec) -> Result<CVec> {
    if m.cols != v.dim() {
        return Err(IsmError::DimensionMismatch {
            context: "matvec",
            expected: m.cols,
            found: v.dim(),
        });
    }
    Ok(matvec_unchecked(m, v.as_slice()))
}

pub(crate) fn matvec_unchecked(m: &CMat, v: &[C64]) -> CVec {
    (0..m.rows)
        .map(|i| {
            m.row(i)
                .iter()
                .zip(v)
                .fold(ZERO, |acc, (a, b)| acc + a * b)
        })
        .collect()
}

/// `m^† v`
pub fn adjoint_matvec(m: &CMat, v: &CVec) -> Result<CVec> {
    if m.rows != v.dim() {
        return Err(IsmError::DimensionMismatch {
            context: "adjoint matvec",
            expected: m.rows,
            found: v.dim(),
        });
    }
    let mut out = vec![ZERO; m.cols];
    for (i, vi) in v.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(m.row(i)) {
            *o += a.conj() * vi;
        }
    }
    Ok(CVec::new(out))
}

/// Pivot threshold relative to the largest row norm.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-14;

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &CMat) -> Result<Self> {
        if !a.is_square() {
            return Err(IsmError::DimensionMismatch {
                context: "LU of non-square matrix",
                expected: a.rows,
                found: a.cols,
            });
        }
        let n = a.rows;
        let scale = a.inf_norm();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|i| (i, lu[i * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmag >= SINGULAR_PIVOT_RATIO * scale) || pmag == 0.0 {
                return Err(IsmError::Singular {
                    column: k,
                    pivot: pmag,
                    scale,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let inv = ONE / lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] * inv;
                if f == ZERO {
                    continue;
                }
                lu[i * n + k] = f;
                for j in k + 1..n {
                    let t = lu[k * n + j];
                    lu[i * n + j] -= f * t;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> CVec {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        CVec::new(x)
    }

    /// Inverse of the factored matrix.
    pub fn inverse(&self) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(n, n);
        let mut e = vec![ZERO; n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = ZERO);
            e[j] = ONE;
            let col = self.solve(&e);
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        out
    }
}

/// Solves `a x = b`.
pub fn solve_linear(a: &CMat, b: &CVec) -> Result<CVec> {
    if a.rows != b.dim() {
        return Err(IsmError::DimensionMismatch {
            context: "solve_linear",
            expected: a.rows,
            found: b.dim(),
        });
    }
    Ok(Lu::factor(a)?.solve(b.as_slice()))
}

/// Cached FFT plans for one transform length, unitary normalization.
#[derive(Clone)]
pub struct Dft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("n", &self.n).finish()
    }
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward_in_place(&self, buf: &mut [C64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
    }

    pub fn inverse_in_place(&self, buf: &mut [C64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
    }
}

/// Unitary discrete Fourier transform; `inverse` selects the `e^{+2πi jk/n}` kernel.
pub fn dft(v: &CVec, inverse: bool) -> CVec {
    let mut buf = v.as_slice().to_vec();
    if buf.is_empty() {
        return CVec::new(buf);
    }
    let plan = Dft::new(buf.len());
    if inverse {
        plan.inverse_in_place(&mut buf);
    } else {
        plan.forward_in_place(&mut buf);
    }
    CVec::new(buf)
}

/// Hermitian tolerance accepted by [`eig_hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matching orthonormal eigenvectors as columns.
pub fn eig_hermitian(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    if !a.is_square() {
        return Err(IsmError::DimensionMismatch {
            context: "eig_hermitian",
            expected: a.rows,
            found: a.cols,
        });
    }
    let residual = a.hermitian_residual();
    if residual > HERMITIAN_TOL * a.max_abs().max(1.0) {
        return Err(IsmError::NotHermitian { residual });
    }
    let n = a.rows;
    // symmetrize so the solver sees an exactly Hermitian input
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Column `j` of `m` as a vector.
pub fn column(m: &CMat, j: usize) -> CVec {
    (0..m.rows()).map(|i| m[(i, j)]).collect()
}
