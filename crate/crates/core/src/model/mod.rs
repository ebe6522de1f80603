//! Conditional next-token models.
//!
//! [`ConditionalModel`] is the only contract the sampler and the metrics rely
//! on: given a context, return a distribution over the next token. The crate
//! ships one exact implementation, [`NGramModel`].

mod distribution;
mod ngram;

pub use distribution::{CategoricalDistribution, NORMALIZATION_TOLERANCE};
pub use ngram::{NGramModel, DEFAULT_ALPHA, DEFAULT_ORDER, MODEL_FORMAT_VERSION, MODEL_MAGIC};

use crate::tokenizer::Token;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("unsupported model file version {found} (this build reads version {supported})")]
    Version { found: u64, supported: u64 },
}

/// An autoregressive model `q(x_t | x_<t)` over a vocabulary of
/// `vocab_size()` tokens whose last id is the end-of-sequence token.
pub trait ConditionalModel {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> Token {
        Token::from_id((self.vocab_size() - 1) as u16)
    }

    fn next_distribution(&self, context: &[Token]) -> Result<CategoricalDistribution, ModelError>;
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn eos(&self) -> Token {
        (**self).eos()
    }

    fn next_distribution(&self, context: &[Token]) -> Result<CategoricalDistribution, ModelError> {
        (**self).next_distribution(context)
    }
}
