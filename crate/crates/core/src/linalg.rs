//! Small dense linear-algebra kernel: a row-major matrix, one-sided Jacobi
//! singular values, Householder least squares and column normalization.
//!
//! Everything here assumes matrices of at most a few hundred rows and columns.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::simplex::StochasticMatrix;

/// Condition number above which a matrix is treated as rank deficient.
pub const RANK_CONDITION_LIMIT: f64 = 1e10;

/// Relative singular-value floor below which the condition number is reported as infinite.
pub const SINGULAR_FLOOR: f64 = 1e-14;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix from f64 rows, converting into the scalar type.
    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let converted: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| T::lit(x)).collect())
            .collect();
        Self::from_rows(&converted)
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

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.to_f64_lossy()).collect())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(l);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for a {}x{} matrix",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn column_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (s, &x) in sums.iter_mut().zip(self.row(i)) {
                *s = *s + x;
            }
        }
        sums
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| crate::scalar::ordered_sum(self.row(i)))
            .collect()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    /// `out[i] = self[perm[i]]`.
    pub fn select_rows(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(perm.len(), self.cols);
        for (i, &src) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar + Serialize> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<T>> = Vec::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(de::Error::custom)
    }
}

/// Singular values in descending order, by one-sided Jacobi rotations.
pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    // Work on the orientation with at least as many rows as columns; store columns contiguously.
    let work = if a.rows() >= a.cols() {
        a.clone()
    } else {
        a.transpose()
    };
    let n = work.cols();
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| work.column(j)).collect();
    let eps = T::epsilon();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let cp = &mut left[p];
                let cq = &mut right[0];
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let xp = *x;
                    let xq = *y;
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Ratio of the largest to the smallest singular value.
///
/// Returns `+inf` when the smallest singular value falls below
/// [`SINGULAR_FLOOR`] times the largest.
pub fn condition_number_2norm<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::DegenerateInput("non-finite entries".into()));
    }
    let sv = singular_values(a);
    let smax = sv[0];
    if smax == T::zero() {
        return Err(Error::DegenerateInput("all-zero matrix".into()));
    }
    let smin = *sv.last().expect("non-empty");
    if smin < T::lit(SINGULAR_FLOOR) * smax {
        return Ok(T::infinity());
    }
    Ok(smax / smin)
}

/// Least-squares solution of `a x = b` through a Householder QR factorization.
///
/// `a` must have at least as many rows as columns and full column rank; a
/// condition number above [`RANK_CONDITION_LIMIT`] is reported as
/// [`Error::RankDeficient`].
pub fn pseudo_inverse_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "right-hand side of length {} for {m} rows",
            b.len()
        )));
    }
    if m < n {
        return Err(Error::ShapeMismatch(format!(
            "underdetermined system: {m} rows, {n} columns"
        )));
    }
    let cond = condition_number_2norm(a).map_err(|_| Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    if !(cond.to_f64_lossy() <= RANK_CONDITION_LIMIT) {
        return Err(Error::RankDeficient {
            condition: cond.to_f64_lossy(),
        });
    }
    let qr = HouseholderQr::new(a);
    Ok(qr.solve_least_squares(b))
}

/// Compact Householder QR for tall matrices.
struct HouseholderQr<T> {
    /// Reflectors below the diagonal, `R` on and above it.
    packed: Matrix<T>,
    /// Householder vector heads and scaling factors.
    betas: Vec<T>,
    heads: Vec<T>,
}

impl<T: Scalar> HouseholderQr<T> {
    fn new(a: &Matrix<T>) -> Self {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let mut betas = vec![T::zero(); n];
        let mut heads = vec![T::zero(); n];
        for k in 0..n {
            let norm = (k..m).fold(T::zero(), |acc, i| acc + r[(i, k)] * r[(i, k)]).sqrt();
            if norm == T::zero() {
                continue;
            }
            let x0 = r[(k, k)];
            let alpha = if x0 >= T::zero() { -norm } else { norm };
            // v = x - alpha e1, stored with head v0 = x0 - alpha.
            let v0 = x0 - alpha;
            let vnorm2 = v0 * v0 + (k + 1..m).fold(T::zero(), |acc, i| acc + r[(i, k)] * r[(i, k)]);
            if vnorm2 == T::zero() {
                continue;
            }
            let beta = T::lit(2.0) / vnorm2;
            heads[k] = v0;
            betas[k] = beta;
            for j in (k + 1)..n {
                let mut s = v0 * r[(k, j)];
                for i in (k + 1)..m {
                    s = s + r[(i, k)] * r[(i, j)];
                }
                let s = s * beta;
                r[(k, j)] = r[(k, j)] - s * v0;
                for i in (k + 1)..m {
                    let vi = r[(i, k)];
                    r[(i, j)] = r[(i, j)] - s * vi;
                }
            }
            r[(k, k)] = alpha;
        }
        Self {
            packed: r,
            betas,
            heads,
        }
    }

    fn solve_least_squares(&self, b: &[T]) -> Vec<T> {
        let (m, n) = self.packed.shape();
        let mut y = b.to_vec();
        // Apply Q^T = H_{n-1} ... H_0.
        for k in 0..n {
            let beta = self.betas[k];
            if beta == T::zero() {
                continue;
            }
            let v0 = self.heads[k];
            let mut s = v0 * y[k];
            for i in (k + 1)..m {
                s = s + self.packed[(i, k)] * y[i];
            }
            let s = s * beta;
            y[k] = y[k] - s * v0;
            for i in (k + 1)..m {
                y[i] = y[i] - s * self.packed[(i, k)];
            }
        }
        let mut x = vec![T::zero(); n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in (k + 1)..n {
                s = s - self.packed[(k, j)] * x[j];
            }
            x[k] = s / self.packed[(k, k)];
        }
        x
    }
}

/// Non-negative least squares `min |a x - b|_2` subject to `x >= 0`
/// (Lawson-Hanson active set). `a` needs full column rank.
pub fn nnls<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "right-hand side of length {} for {m} rows",
            b.len()
        )));
    }
    let scale = a.as_slice().iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
        * b.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    let tol = T::lit(1e-12) * scale.max(T::min_positive_value());
    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];

    let gradient = |x: &[T]| -> Result<Vec<T>> {
        let ax = a.mul_vec(x)?;
        let resid: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        Ok((0..n).map(|j| (0..m).fold(T::zero(), |acc, i| acc + a[(i, j)] * resid[i])).collect())
    };

    for _ in 0..3 * n + 3 {
        let w = gradient(&x)?;
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .fold(None, |best: Option<usize>, j| match best {
                Some(bj) if w[bj] >= w[j] => Some(bj),
                _ => Some(j),
            });
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&c| passive[c]).collect();
            let sub = Matrix::from_fn(m, cols.len(), |i, c| a[(i, cols[c])]);
            let z_sub = pseudo_inverse_solve(&sub, b)?;
            let mut z = vec![T::zero(); n];
            for (c, &col) in cols.iter().enumerate() {
                z[col] = z_sub[c];
            }
            if cols.iter().all(|&c| z[c] > T::zero()) {
                x = z;
                break;
            }
            let mut step = T::one();
            for &c in &cols {
                if z[c] <= T::zero() {
                    let denom = x[c] - z[c];
                    if denom > T::zero() {
                        step = step.min(x[c] / denom);
                    }
                }
            }
            for c in 0..n {
                x[c] = x[c] + step * (z[c] - x[c]);
                if passive[c] && x[c] <= tol {
                    passive[c] = false;
                    x[c] = T::zero();
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}

/// Scales each column to sum to one. Returns the normalized matrix and the
/// original column sums, so that `a = out * diag(scales)`.
pub fn column_normalize<T: Scalar>(a: &Matrix<T>) -> Result<(StochasticMatrix<T>, Vec<T>)> {
    if let Some(bad) = a.as_slice().iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "column_normalize needs finite non-negative entries, found {bad}"
        )));
    }
    let scales = a.column_sums();
    if let Some(j) = scales.iter().position(|&s| s <= T::zero()) {
        return Err(Error::ZeroColumn(j));
    }
    let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] / scales[j]);
    Ok((StochasticMatrix::from_normalized(out), scales))
}
