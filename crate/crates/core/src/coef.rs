use crate::error::{invalid, Error, Result};

/// Magnitude at or below which a coefficient counts as zero for support size.
pub const ZERO_TOL: f64 = 1e-10;

/// Length-`p` coefficient vector stored as (support, values).
///
/// The support is strictly increasing. Stored values may be exactly zero
/// (a restricted solve can return zeros on its active set).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoef {
    dim: usize,
    support: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCoef {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            support: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn new(dim: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} support indices but {} values",
                support.len(),
                values.len()
            )));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("support indices must be strictly increasing");
        }
        if support.last().is_some_and(|&j| j >= dim) {
            return invalid(format!("support index out of range for dimension {dim}"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("coefficient values must be finite");
        }
        Ok(Self {
            dim,
            support,
            values,
        })
    }

    /// Builds from `(index, value)` pairs in any order.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(j, _)| j);
        let (support, values) = pairs.into_iter().unzip();
        Self::new(dim, support, values)
    }

    /// Keeps the exact nonzeros of a dense vector.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (support, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, &v)| (j, v))
            .unzip();
        Self {
            dim: dense.len(),
            support,
            values,
        }
    }

    pub(crate) fn from_parts_unchecked(dim: usize, support: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert!(support.windows(2).all(|w| w[0] < w[1]));
        Self {
            dim,
            support,
            values,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, j: usize) -> f64 {
        match self.support.binary_search(&j) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// Number of exactly nonzero entries.
    pub fn l0(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Number of entries with magnitude above [`ZERO_TOL`].
    pub fn effective_l0(&self) -> usize {
        self.values.iter().filter(|v| v.abs() > ZERO_TOL).count()
    }

    /// Indices with magnitude above [`ZERO_TOL`].
    pub fn effective_support(&self) -> Vec<usize> {
        self.iter()
            .filter(|(_, v)| v.abs() > ZERO_TOL)
            .map(|(j, _)| j)
            .collect()
    }

    /// `beta|_A`: entries outside `active` (sorted) are dropped; entries of
    /// `active` outside the support are stored as explicit zeros.
    pub fn restrict(&self, active: &[usize]) -> Self {
        Self {
            dim: self.dim,
            support: active.to_vec(),
            values: active.iter().map(|&j| self.get(j)).collect(),
        }
    }

    /// Drops explicit zeros.
    pub fn pruned(&self) -> Self {
        let (support, values) = self.iter().filter(|(_, v)| *v != 0.0).unzip();
        Self {
            dim: self.dim,
            support,
            values,
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            support: self.support.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_support() {
        assert!(SparseCoef::new(4, vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseCoef::new(4, vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseCoef::new(2, vec![2], vec![1.0]).is_err());
        assert!(SparseCoef::new(3, vec![0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn l0_ignores_explicit_zeros() {
        let b = SparseCoef::new(5, vec![0, 2, 4], vec![1.0, 0.0, -3.0]).unwrap();
        assert_eq!(b.l0(), 2);
        assert_eq!(b.pruned().support(), &[0, 4]);
        assert_eq!(b.to_dense(), vec![1.0, 0.0, 0.0, 0.0, -3.0]);
    }

    #[test]
    fn restrict_fills_and_drops() {
        let b = SparseCoef::new(5, vec![1, 3], vec![2.0, 4.0]).unwrap();
        let r = b.restrict(&[0, 3]);
        assert_eq!(r.support(), &[0, 3]);
        assert_eq!(r.values(), &[0.0, 4.0]);
    }
}
