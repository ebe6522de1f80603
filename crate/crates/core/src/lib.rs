//! Tokenize monophonic melodies, fit an exact n-gram model, sample from it
//! with ancestral or locally typical decoding, and measure how information
//! content distributes around the model entropy.

pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod tokenizer;

#[doc(hidden)]
pub mod testing;

pub use model::{CategoricalDistribution, ConditionalModel, NGramModel};
pub use tokenizer::{NoteEvent, NoteKind, Token, TokenSequence};
