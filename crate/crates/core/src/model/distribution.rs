use super::ModelError;
use crate::tokenizer::Token;

/// Tolerance used when validating externally supplied probability vectors.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    /// Validates non-negativity, finiteness and normalization (within
    /// [`NORMALIZATION_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::InvalidArgument("empty distribution".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(ModelError::InvalidArgument(format!(
                "probability {p} at index {i} is not a finite non-negative number"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ModelError::InvalidArgument(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(CategoricalDistribution { probs })
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(!probs.is_empty());
        CategoricalDistribution { probs }
    }

    pub fn one_hot(size: usize, index: usize) -> Result<Self, ModelError> {
        if index >= size {
            return Err(ModelError::InvalidArgument(format!(
                "index {index} outside a vocabulary of {size}"
            )));
        }
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Ok(CategoricalDistribution { probs })
    }

    pub fn uniform(size: usize) -> Result<Self, ModelError> {
        if size == 0 {
            return Err(ModelError::InvalidArgument("empty distribution".into()));
        }
        Ok(CategoricalDistribution {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `token`, or `None` when it is outside the vocabulary.
    pub fn prob(&self, token: Token) -> Option<f64> {
        self.probs.get(token.index()).copied()
    }

    /// Number of entries with positive probability.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}
