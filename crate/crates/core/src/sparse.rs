//! Sparse samples, datasets and the dense parameter vector.
//!
//! Indices are 0-based everywhere inside the crate; the text format's
//! 1-based indices are converted in [`crate::data`].

use crate::error::{Error, Result};

/// A canonical sparse vector: strictly increasing indices, all `< dim`,
/// no stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    /// Builds a vector from `(index, value)` pairs. Pairs with a zero value
    /// are dropped; unsorted, duplicate or out-of-range indices are rejected.
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>, dim: usize) -> Result<Self> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (index, value) in entries {
            if index >= dim {
                return Err(Error::InvalidSparse(format!(
                    "index {index} out of range for dimension {dim}"
                )));
            }
            if let Some(&last) = indices.last() {
                if index <= last {
                    return Err(Error::InvalidSparse(format!(
                        "indices not strictly increasing ({last} then {index})"
                    )));
                }
            }
            if !value.is_finite() {
                return Err(Error::InvalidSparse(format!(
                    "non-finite value at index {index}"
                )));
            }
            if value != 0.0 {
                indices.push(index);
                values.push(value);
            }
        }
        Ok(Self {
            indices,
            values,
            dim,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Same entries, different nominal dimensionality. Fails if an entry
    /// would fall outside the new dimension.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if let Some(&last) = self.indices.last() {
            if last >= dim {
                return Err(Error::InvalidSparse(format!(
                    "index {last} out of range for dimension {dim}"
                )));
            }
        }
        self.dim = dim;
        Ok(self)
    }

    /// Multiplies every value by `factor` (which must be finite and nonzero).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            dim: self.dim,
        }
    }

    /// Inner product with a dense slice.
    pub fn dot_dense(&self, dense: &[f64]) -> Result<f64> {
        if dense.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: dense.len(),
            });
        }
        Ok(self.iter().map(|(i, v)| v * dense[i]).sum())
    }
}

/// Squared Euclidean norm of a sparse vector (β² for one sample).
pub fn l2_norm_sq(x: &SparseVector) -> f64 {
    x.values.iter().map(|v| v * v).sum()
}

/// Binary-labelled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: SparseVector,
    label: u8,
}

impl Sample {
    pub fn new(features: SparseVector, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidLabel(label as i64));
        }
        Ok(Self { features, label })
    }

    /// The file label, 0 or 1.
    pub fn label(&self) -> u8 {
        self.label
    }

    /// The label as used by the hinge loss: -1.0 for class 0, +1.0 for class 1.
    pub fn signed_label(&self) -> f64 {
        if self.label == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

/// A non-empty collection of samples sharing one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, dim: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = samples.iter().find(|s| s.features.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.features.dim(),
            });
        }
        Ok(Self { samples, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; a `Dataset` holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Largest squared sample norm (β²_max).
    pub fn max_norm_sq(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| l2_norm_sq(&s.features))
            .fold(0.0, f64::max)
    }
}

/// Dense parameter vector plus the number of SGD updates applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    pub weights: Vec<f64>,
    pub iterations: u64,
}

impl DenseModel {
    pub fn zeros(dim: usize) -> Self {
        Self::filled(dim, 0.0)
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self {
            weights: vec![value; dim],
            iterations: 0,
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self {
            weights,
            iterations: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Euclidean distance between two equally sized models.
    pub fn distance(&self, other: &DenseModel) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `x · w`.
pub fn dot(x: &SparseVector, w: &DenseModel) -> Result<f64> {
    x.dot_dense(&w.weights)
}

/// `w += a · x`, touching only the support of `x`. The iteration counter is
/// left alone.
pub fn scale_add(w: &mut DenseModel, a: f64, x: &SparseVector) -> Result<()> {
    check_dim(w.dim(), x.dim())?;
    if a == 0.0 {
        return Ok(());
    }
    for (i, v) in x.iter() {
        w.weights[i] += a * v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(entries: &[(usize, f64)], dim: usize) -> SparseVector {
        SparseVector::new(entries.iter().copied(), dim).unwrap()
    }

    #[test]
    fn dot_examples() {
        let w = DenseModel::from_weights(vec![3.0, 5.0]);
        assert_eq!(dot(&SparseVector::empty(2), &w).unwrap(), 0.0);
        assert_eq!(dot(&sv(&[(0, 1.0)], 2), &w).unwrap(), 3.0);
        let w = DenseModel::from_weights(vec![2.0, 9.0, 0.25]);
        assert_eq!(dot(&sv(&[(0, 0.5), (2, 2.0)], 3), &w).unwrap(), 1.5);
    }

    #[test]
    fn dot_rejects_mismatch() {
        let w = DenseModel::zeros(3);
        assert!(matches!(
            dot(&sv(&[(0, 1.0)], 2), &w),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn scale_add_examples() {
        let mut w = DenseModel::from_weights(vec![0.5, 0.25]);
        scale_add(&mut w, 0.0, &sv(&[(0, 7.0)], 2)).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.25]);

        let mut w = DenseModel::zeros(2);
        scale_add(&mut w, 1.0, &sv(&[(1, 2.0)], 2)).unwrap();
        assert_eq!(w.weights, vec![0.0, 2.0]);

        let mut w = DenseModel::from_weights(vec![1.0, 1.0]);
        w.iterations = 7;
        scale_add(&mut w, -0.5, &sv(&[(0, 2.0)], 2)).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0]);
        assert_eq!(w.iterations, 7);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm_sq(&SparseVector::empty(3)), 0.0);
        assert_eq!(l2_norm_sq(&sv(&[(4, 3.0), (7, 4.0)], 8)), 25.0);
        let x = sv(&[(1, 3.0), (2, 4.0)], 3).scaled(0.2);
        assert!((l2_norm_sq(&x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn canonical_form() {
        let x = sv(&[(0, 0.0), (3, 1.5)], 4);
        assert_eq!(x.indices(), &[3]);
        assert!(SparseVector::new([(2, 1.0), (1, 1.0)], 4).is_err());
        assert!(SparseVector::new([(1, 1.0), (1, 1.0)], 4).is_err());
        assert!(SparseVector::new([(4, 1.0)], 4).is_err());
        assert!(SparseVector::new([(0, f64::NAN)], 4).is_err());
    }

    #[test]
    fn dataset_invariants() {
        assert!(matches!(Dataset::new(vec![], 3), Err(Error::EmptyDataset)));
        let s = Sample::new(sv(&[(0, 1.0)], 2), 1).unwrap();
        assert!(Dataset::new(vec![s], 3).is_err());
        assert!(Sample::new(SparseVector::empty(1), 2).is_err());
    }

    fn arb_sparse(dim: usize) -> impl Strategy<Value = SparseVector> {
        proptest::collection::btree_map(0..dim, -10.0f64..10.0, 0..dim).prop_map(move |m| {
            SparseVector::new(m, dim).unwrap()
        })
    }

    proptest! {
        #[test]
        fn dot_is_bilinear(
            x in arb_sparse(12),
            w1 in proptest::collection::vec(-5.0f64..5.0, 12),
            w2 in proptest::collection::vec(-5.0f64..5.0, 12),
            alpha in -3.0f64..3.0,
        ) {
            let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + b).collect();
            let lhs = dot(&x, &DenseModel::from_weights(combo)).unwrap();
            let rhs = alpha * dot(&x, &DenseModel::from_weights(w1)).unwrap()
                + dot(&x, &DenseModel::from_weights(w2)).unwrap();
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-9 * scale);
        }

        #[test]
        fn scale_add_leaves_off_support_untouched(
            x in arb_sparse(16),
            w in proptest::collection::vec(-5.0f64..5.0, 16),
            a in -2.0f64..2.0,
        ) {
            let mut model = DenseModel::from_weights(w.clone());
            scale_add(&mut model, a, &x).unwrap();
            for j in 0..16 {
                if !x.indices().contains(&j) {
                    prop_assert_eq!(model.weights[j].to_bits(), w[j].to_bits());
                }
            }
        }
    }
}
