//! Small hand-built models used by tests and oracles.

use crate::model::{CategoricalDistribution, ConditionalModel, ModelError};
use crate::tokenizer::Token;

/// Returns the same distribution for every context.
#[derive(Debug, Clone)]
pub struct FixedModel {
    dist: CategoricalDistribution,
}

impl FixedModel {
    pub fn new(dist: CategoricalDistribution) -> Self {
        FixedModel { dist }
    }
}

impl ConditionalModel for FixedModel {
    fn vocab_size(&self) -> usize {
        self.dist.len()
    }

    fn next_distribution(&self, _context: &[Token]) -> Result<CategoricalDistribution, ModelError> {
        Ok(self.dist.clone())
    }
}

/// Emits a fixed path one-hot, position by position, then eos forever.
#[derive(Debug, Clone)]
pub struct SequenceTable {
    vocab_size: usize,
    path: Vec<u16>,
}

impl SequenceTable {
    pub fn deterministic(vocab_size: usize, path: &[u16]) -> Self {
        SequenceTable {
            vocab_size,
            path: path.to_vec(),
        }
    }
}

impl ConditionalModel for SequenceTable {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, context: &[Token]) -> Result<CategoricalDistribution, ModelError> {
        let next = self
            .path
            .get(context.len())
            .copied()
            .unwrap_or((self.vocab_size - 1) as u16);
        CategoricalDistribution::one_hot(self.vocab_size, next as usize)
    }
}
