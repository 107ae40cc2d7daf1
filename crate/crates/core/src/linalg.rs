//! Small dense linear algebra: row-major matrices, cyclic Jacobi
//! eigenvalues, Cholesky, pivoted LDLᵀ solves and Householder least squares.
//!
//! Every matrix handled by the crate is at most a few dozen rows, so none of
//! this attempts blocking or sparsity.

use crate::scalar::Real;
use std::ops::{Index, IndexMut};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("least-squares system is rank deficient")]
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row slices; panics on ragged input.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn column(v: &[T]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * k).collect() }
    }

    /// `self += k * rhs`.
    pub fn axpy(&mut self, k: T, rhs: &Self) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "axpy shape");
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += k * b;
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `tr(self · rhs)` without forming the product.
    pub fn trace_of_product(&self, rhs: &Self) -> T {
        assert_eq!((self.cols, self.rows), (rhs.rows, rhs.cols), "trace_of_product shape");
        let mut acc = T::zero();
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * rhs[(k, i)];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Checks symmetry to a tolerance relative to the largest entry.
    pub fn check_symmetric(&self) -> Result<(), LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let tol = T::lit(1e-12) * self.max_abs().max(T::one());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let gap = (self[(i, j)] - self[(j, i)]).abs();
                if gap > tol {
                    return Err(LinalgError::NotSymmetric { i, j, gap: gap.to_f64_lossy() });
                }
            }
        }
        Ok(())
    }

    pub fn symmetrize(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * T::half())
    }

    /// Places `blocks` on the diagonal of a larger matrix.
    pub fn block_diag(blocks: &[&Self]) -> Self {
        let n: usize = blocks.iter().map(|b| b.rows).sum();
        let m: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(n, m);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out[(r0 + i, c0 + j)] = b[(i, j)];
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    /// Assembles a 2×2 arrangement of blocks `[a b; c d]`.
    pub fn from_blocks(a: &Self, b: &Self, c: &Self, d: &Self) -> Self {
        assert_eq!(a.rows, b.rows);
        assert_eq!(c.rows, d.rows);
        assert_eq!(a.cols, c.cols);
        assert_eq!(b.cols, d.cols);
        let rows = a.rows + c.rows;
        let cols = a.cols + b.cols;
        Self::from_fn(rows, cols, |i, j| match (i < a.rows, j < a.cols) {
            (true, true) => a[(i, j)],
            (true, false) => b[(i, j - a.cols)],
            (false, true) => c[(i - a.rows, j)],
            (false, false) => d[(i - a.rows, j - a.cols)],
        })
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    /// Ascending eigenvalues.
    pub values: Vec<T>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Mat<T>,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigenvalue iteration.
///
/// Sweeps until the off-diagonal Frobenius norm is below
/// `1e-12 · max(1, ‖A‖_F)` (or the type's precision floor for `f32`).
pub fn sym_eigen<T: Real>(a: &Mat<T>) -> Result<SymEigen<T>, LinalgError> {
    a.check_symmetric()?;
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = Mat::identity(n);
    let scale = m.frobenius_norm().max(T::one());
    let floor = (T::epsilon() * T::lit(16.0)).max(T::lit(1e-12));
    let target = floor * scale;
    let mut sweeps = 0;
    let off = |m: &Mat<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    while off(&m) > target && sweeps < 100 {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::two() * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors, sweeps })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig<T: Real>(a: &Mat<T>) -> Result<T, LinalgError> {
    Ok(sym_eigen(a)?.values.first().copied().unwrap_or_else(T::infinity))
}

pub fn max_eig<T: Real>(a: &Mat<T>) -> Result<T, LinalgError> {
    Ok(sym_eigen(a)?.values.last().copied().unwrap_or_else(T::neg_infinity))
}

/// Induced 2-norm `sqrt(λ_max(AᵀA))`.
pub fn spectral_norm<T: Real>(a: &Mat<T>) -> T {
    let ata = a.transpose().matmul(a);
    max_eig(&ata.symmetrize()).map(|l| l.max(T::zero()).sqrt()).unwrap_or_else(|_| T::nan())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Real>(a: &Mat<T>) -> Result<Mat<T>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix and `log det`.
pub fn spd_inverse_logdet<T: Real>(a: &Mat<T>) -> Result<(Mat<T>, T), LinalgError> {
    let l = cholesky(a)?;
    let n = a.rows();
    let logdet = (0..n).map(|i| l[(i, i)].ln()).sum::<T>() * T::two();
    // Invert L, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Mat::zeros(n, n);
    for j in 0..n {
        linv[(j, j)] = T::one() / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = T::zero();
            for k in j..i {
                s += l[(i, k)] * linv[(k, j)];
            }
            linv[(i, j)] = -s / l[(i, i)];
        }
    }
    let inv = linv.transpose().matmul(&linv);
    Ok((inv.symmetrize(), logdet))
}

pub fn spd_inverse<T: Real>(a: &Mat<T>) -> Result<Mat<T>, LinalgError> {
    spd_inverse_logdet(a).map(|(inv, _)| inv)
}

/// Solves `A x = b` for a general square matrix by partially pivoted
/// Gaussian elimination.
pub fn solve_general<T: Real>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().partial_cmp(&m[(j, k)].abs()).unwrap())
            .unwrap();
        if m[(p, k)] == T::zero() {
            return Err(LinalgError::RankDeficient);
        }
        if p != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        for i in (k + 1)..n {
            let f = m[(i, k)] / m[(k, k)];
            for j in k..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
            let v = x[k];
            x[i] -= f * v;
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in (k + 1)..n {
            s -= m[(k, j)] * x[j];
        }
        x[k] = s / m[(k, k)];
    }
    Ok(x)
}

/// Symmetric positive semidefinite solve by LDLᵀ with diagonal pivoting.
///
/// Pivots below `rel_floor · max|diag|` are treated as null directions and
/// the corresponding solution components are set to zero, which yields a
/// minimum-effort step for rank-deficient Hessians.
pub fn solve_psd_pivoted<T: Real>(a: &Mat<T>, b: &[T], rel_floor: T) -> Result<Vec<T>, LinalgError> {
    a.check_symmetric()?;
    let n = a.rows();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut m = a.symmetrize();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = (0..n).fold(T::zero(), |s, i| s.max(m[(i, i)].abs()));
    let floor = rel_floor * scale.max(T::min_positive_value());
    let mut rank = n;
    // In-place LDLᵀ on the permuted matrix; L stored strictly below diagonal.
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap();
        if p != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = tmp;
            }
            for i in 0..n {
                let tmp = m[(i, k)];
                m[(i, k)] = m[(i, p)];
                m[(i, p)] = tmp;
            }
            perm.swap(k, p);
        }
        let d = m[(k, k)];
        if d <= floor {
            rank = k;
            break;
        }
        let col: Vec<T> = ((k + 1)..n).map(|i| m[(i, k)]).collect();
        for i in (k + 1)..n {
            let ci = col[i - k - 1];
            for j in (k + 1)..=i {
                let v = ci * col[j - k - 1] / d;
                m[(i, j)] -= v;
                if i != j {
                    m[(j, i)] = m[(i, j)];
                }
            }
            m[(i, k)] = ci / d;
        }
    }
    let mut y: Vec<T> = perm.iter().map(|&p| b[p]).collect();
    // Forward substitution over the retained leading block.
    for i in 0..rank {
        let mut s = y[i];
        for k in 0..i {
            s -= m[(i, k)] * y[k];
        }
        y[i] = s;
    }
    for i in 0..rank {
        y[i] /= m[(i, i)];
    }
    for v in y.iter_mut().skip(rank) {
        *v = T::zero();
    }
    for i in (0..rank).rev() {
        let mut s = y[i];
        for k in (i + 1)..rank {
            s -= m[(k, i)] * y[k];
        }
        y[i] = s;
    }
    let mut x = vec![T::zero(); n];
    for (i, &p) in perm.iter().enumerate() {
        x[p] = y[i];
    }
    Ok(x)
}

/// Least-squares solution of the overdetermined system `A x ≈ b` by
/// Householder QR.
pub fn least_squares<T: Real>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m {
        return Err(LinalgError::DimensionMismatch { expected: m, got: b.len() });
    }
    if m < n {
        return Err(LinalgError::RankDeficient);
    }
    let mut r = a.clone();
    let mut y = b.to_vec();
    let scale = a.max_abs().max(T::min_positive_value());
    for k in 0..n {
        let norm = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<T>().sqrt();
        if norm <= T::epsilon() * scale {
            return Err(LinalgError::RankDeficient);
        }
        let alpha = if r[(k, k)] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|&x| x * x).sum();
        if vnorm2 == T::zero() {
            continue;
        }
        for j in k..n {
            let s: T = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
            let f = T::two() * s / vnorm2;
            for i in k..m {
                r[(i, j)] -= f * v[i - k];
            }
        }
        let s: T = (k..m).map(|i| v[i - k] * y[i]).sum();
        let f = T::two() * s / vnorm2;
        for i in k..m {
            y[i] -= f * v[i - k];
        }
    }
    let mut x = vec![T::zero(); n];
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in (k + 1)..n {
            s -= r[(k, j)] * x[j];
        }
        x[k] = s / r[(k, k)];
    }
    Ok(x)
}
