//! Probability vectors and column-stochastic matrices.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{argmax, ordered_sum, Scalar};

/// Largest deviation of a sum from one accepted before renormalization.
pub const SIMPLEX_INPUT_TOL: f64 = 1e-6;

/// A probability vector: non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVec<T>(Vec<T>);

impl<T: Scalar> SimplexVec<T> {
    /// Validates and renormalizes a vector that should already be a distribution.
    pub fn new(entries: Vec<T>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidSimplex("empty vector".into()));
        }
        if let Some(bad) = entries.iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidSimplex(format!("entry {bad} is negative or non-finite")));
        }
        let sum = ordered_sum(&entries);
        if (sum - T::one()).abs() > T::lit(SIMPLEX_INPUT_TOL) {
            return Err(Error::InvalidSimplex(format!("entries sum to {sum}")));
        }
        Ok(Self(entries.into_iter().map(|x| x / sum).collect()))
    }

    /// Normalizes arbitrary non-negative weights with a positive total.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidSimplex(format!("weight {bad} is negative or non-finite")));
        }
        let sum = ordered_sum(&weights);
        if sum <= T::zero() {
            return Err(Error::InvalidSimplex("weights sum to zero".into()));
        }
        Ok(Self(weights.into_iter().map(|x| x / sum).collect()))
    }

    /// Wraps entries that the caller already guarantees are a distribution.
    pub(crate) fn from_trusted(entries: Vec<T>) -> Self {
        Self(entries)
    }

    pub fn uniform(dim: usize) -> Self {
        Self(vec![T::one() / T::lit(dim as f64); dim])
    }

    pub fn one_hot(dim: usize, index: usize) -> Self {
        let mut v = vec![T::zero(); dim];
        v[index] = T::one();
        Self(v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Total-variation distance `0.5 * |p - q|_1`.
    pub fn total_variation(&self, other: &Self) -> T {
        let l1 = self
            .0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        l1 / T::lit(2.0)
    }
}

impl<T> AsRef<[T]> for SimplexVec<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Scalar + Serialize> Serialize for SimplexVec<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

/// Column-stochastic matrix: non-negative entries, each column a distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix<T>(Matrix<T>);

impl<T: Scalar> StochasticMatrix<T> {
    /// Validates that every column is (within tolerance) a distribution and
    /// renormalizes the columns exactly.
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::InvalidSimplex("empty matrix".into()));
        }
        if let Some(bad) = m.as_slice().iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidSimplex(format!("entry {bad} is negative or non-finite")));
        }
        let sums = m.column_sums();
        for (j, &s) in sums.iter().enumerate() {
            if (s - T::one()).abs() > T::lit(SIMPLEX_INPUT_TOL) {
                return Err(Error::InvalidSimplex(format!("column {j} sums to {s}")));
            }
        }
        Ok(Self(Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] / sums[j])))
    }

    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_f64_rows(rows)?)
    }

    /// Validates like [`StochasticMatrix::new`] but keeps the entries bit for bit.
    pub fn from_validated(m: Matrix<T>) -> Result<Self> {
        Self::new(m.clone())?;
        Ok(Self(m))
    }

    pub(crate) fn from_normalized(m: Matrix<T>) -> Self {
        Self(m)
    }

    pub fn from_columns(columns: &[SimplexVec<T>]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.dim());
        if columns.iter().any(|c| c.dim() != rows) {
            return Err(Error::ShapeMismatch("columns of unequal length".into()));
        }
        Ok(Self(Matrix::from_fn(rows, columns.len(), |i, j| {
            columns[j].as_slice()[i]
        })))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.0[(i, j)]
    }

    pub fn column(&self, j: usize) -> SimplexVec<T> {
        SimplexVec::from_trusted(self.0.column(j))
    }

    /// Reorders rows; column sums are unchanged so the result stays stochastic.
    pub fn select_rows(&self, perm: &[usize]) -> Self {
        Self(self.0.select_rows(perm))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Ok(Self(self.0.matmul(&other.0)?))
    }

    pub fn cast<U: Scalar>(&self) -> StochasticMatrix<U> {
        StochasticMatrix(self.0.cast())
    }
}

impl<T: Scalar + Serialize> Serialize for StochasticMatrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for StochasticMatrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Matrix::<T>::deserialize(d)?;
        StochasticMatrix::from_validated(m).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_validation() {
        assert!(SimplexVec::new(vec![0.3, 0.7]).is_ok());
        assert!(SimplexVec::new(vec![0.3, 0.7 + 5e-7]).is_ok());
        assert!(SimplexVec::new(vec![0.3, 0.8]).is_err());
        assert!(SimplexVec::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexVec::<f64>::new(vec![]).is_err());
        let v = SimplexVec::new(vec![0.3, 0.7 + 5e-7]).unwrap();
        assert!((v.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        let v = SimplexVec::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(v.argmax(), 0);
    }

    #[test]
    fn stochastic_rejects_bad_columns() {
        assert!(StochasticMatrix::<f64>::from_f64_rows(&[[0.5, 1.0], [0.5, 0.0]]).is_ok());
        assert!(StochasticMatrix::<f64>::from_f64_rows(&[[0.5, 1.0], [0.6, 0.0]]).is_err());
        let m = StochasticMatrix::from_f64_rows(&[[0.17, 0.65], [0.83, 0.35]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: StochasticMatrix<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
