//! Ancestral and locally typical decoding.
//!
//! Randomness comes from ChaCha8 streams: item `i` of a batch seeded with `s`
//! uses `ChaCha8Rng::seed_from_u64(s)` switched to stream `i`, so a batch is
//! reproducible regardless of how items are scheduled across threads.

use crate::metrics::event_entropy;
use crate::model::{CategoricalDistribution, ConditionalModel, ModelError};
use crate::tokenizer::Token;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum Strategy {
    Conventional,
    Typical { tau: f64 },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Conventional => "conventional".into(),
            Strategy::Typical { tau } => format!("typical@{tau}"),
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            Strategy::Conventional => None,
            Strategy::Typical { tau } => Some(*tau),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn check_tau(tau: f64) -> Result<(), SamplerError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(SamplerError::InvalidArgument(format!(
            "tau must lie in (0, 1], got {tau}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Longest sequence, end-of-sequence token included.
    pub max_len: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(strategy: Strategy, max_len: usize, seed: u64) -> Result<Self, SamplerError> {
        let config = SamplerConfig {
            strategy,
            max_len,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if let Strategy::Typical { tau } = self.strategy {
            check_tau(tau)?;
        }
        if self.max_len == 0 {
            return Err(SamplerError::InvalidArgument(
                "max_len must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Keeps the smallest set of most typical tokens whose mass reaches `tau` and
/// renormalizes.
///
/// Tokens are ranked by `|H + ln q_v|` (ties by ascending id) and taken until
/// their cumulative probability is at least `tau`. When the kept set is the
/// whole support the input is returned unchanged.
pub fn typical_prune(
    dist: &CategoricalDistribution,
    tau: f64,
) -> Result<CategoricalDistribution, SamplerError> {
    check_tau(tau)?;
    let probs = dist.probs();
    let entropy = event_entropy(dist);
    let mut ranked: Vec<(f64, usize)> = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(v, p)| ((entropy + p.ln()).abs(), v))
        .collect();
    if ranked.is_empty() {
        return Err(SamplerError::InvalidArgument(
            "distribution has no support".into(),
        ));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut mass = 0.0;
    let mut keep = ranked.len();
    for (i, &(_, v)) in ranked.iter().enumerate() {
        mass += probs[v];
        if mass >= tau {
            keep = i + 1;
            break;
        }
    }
    if keep == ranked.len() {
        return Ok(dist.clone());
    }
    let kept = &ranked[..keep];
    let total: f64 = kept.iter().map(|&(_, v)| probs[v]).sum();
    let mut out = vec![0.0; probs.len()];
    for &(_, v) in kept {
        out[v] = probs[v] / total;
    }
    Ok(CategoricalDistribution::from_vec_unchecked(out))
}

/// The random stream for batch item `index`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Inverse-CDF draw from one uniform `[0, 1)` variate.
pub fn draw<R: Rng + ?Sized>(dist: &CategoricalDistribution, rng: &mut R) -> Token {
    let u: f64 = rng.random();
    let probs = dist.probs();
    let mut cum = 0.0;
    let mut last = 0;
    for (v, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = v;
            if u < cum {
                return Token::from_id(v as u16);
            }
        }
    }
    Token::from_id(last as u16)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledSequence {
    pub tokens: Vec<Token>,
    /// The end-of-sequence token was forced by the length cap rather than
    /// drawn.
    pub truncated: bool,
}

/// Draws one sequence with an explicit generator. Up to `max_len - 1` tokens
/// are drawn; if none of them is eos, eos is appended and the sequence is
/// flagged as truncated.
pub fn sample_with_rng<M, R>(
    model: &M,
    strategy: Strategy,
    max_len: usize,
    rng: &mut R,
) -> Result<SampledSequence, SamplerError>
where
    M: ConditionalModel + ?Sized,
    R: Rng + ?Sized,
{
    let eos = model.eos();
    let mut tokens = Vec::new();
    while tokens.len() + 1 < max_len {
        let dist = model.next_distribution(&tokens)?;
        let dist = match strategy {
            Strategy::Conventional => dist,
            Strategy::Typical { tau } => typical_prune(&dist, tau)?,
        };
        let tok = draw(&dist, rng);
        tokens.push(tok);
        if tok == eos {
            return Ok(SampledSequence {
                tokens,
                truncated: false,
            });
        }
    }
    tokens.push(eos);
    Ok(SampledSequence {
        tokens,
        truncated: true,
    })
}

/// One sequence from stream 0 of `config.seed`.
pub fn sample_sequence<M: ConditionalModel + ?Sized>(
    model: &M,
    config: &SamplerConfig,
) -> Result<SampledSequence, SamplerError> {
    config.validate()?;
    sample_with_rng(
        model,
        config.strategy,
        config.max_len,
        &mut item_rng(config.seed, 0),
    )
}

/// `count` sequences; item `i` uses stream `i`. Runs on the current rayon
/// pool and returns items in index order.
pub fn sample_batch<M: ConditionalModel + Sync + ?Sized>(
    model: &M,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<SampledSequence>, SamplerError> {
    config.validate()?;
    if count == 0 {
        return Err(SamplerError::InvalidArgument(
            "count must be at least 1".into(),
        ));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            sample_with_rng(
                model,
                config.strategy,
                config.max_len,
                &mut item_rng(config.seed, i),
            )
        })
        .collect()
}
