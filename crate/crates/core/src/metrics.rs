//! Information content, entropy and typicality divergences.
//!
//! All quantities are in nats; [`Units`] converts at report time.

use crate::model::{CategoricalDistribution, ConditionalModel, ModelError};
use crate::sampler::{self, SamplerConfig, SamplerError, Strategy};
use crate::tokenizer::Token;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty source: {0}")]
    EmptySource(String),
    #[error("enumeration refused: {0}")]
    Intractable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

impl Units {
    /// Factor applied to a value in nats.
    pub fn scale(self) -> f64 {
        match self {
            Units::Nats => 1.0,
            Units::Bits => 1.0 / std::f64::consts::LN_2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Units::Nats => "nats",
            Units::Bits => "bits",
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nats" => Ok(Units::Nats),
            "bits" => Ok(Units::Bits),
            other => Err(format!("unknown units {other:?} (expected nats or bits)")),
        }
    }
}

/// Surprisal `-ln q(token)`. A zero-probability token yields `+inf` and a
/// logged warning.
pub fn event_ic(dist: &CategoricalDistribution, token: Token) -> Result<f64, MetricsError> {
    let p = dist.prob(token).ok_or_else(|| {
        MetricsError::InvalidArgument(format!(
            "token {} outside a distribution of size {}",
            token.id(),
            dist.len()
        ))
    })?;
    if p == 0.0 {
        log::warn!("token {} has zero probability; IC is infinite", token.id());
        return Ok(f64::INFINITY);
    }
    // -ln(1) is -0.0
    Ok((-p.ln()).max(0.0))
}

/// Shannon entropy `-sum p ln p` with `0 ln 0 = 0`.
pub fn event_entropy(dist: &CategoricalDistribution) -> f64 {
    let h: f64 = dist
        .probs()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Per-event typicality: signed `epsilon = entropy - ic`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventTypicality {
    pub ic: f64,
    pub entropy: f64,
    pub epsilon: f64,
}

impl EventTypicality {
    pub fn abs_epsilon(&self) -> f64 {
        self.epsilon.abs()
    }
}

pub fn event_typicality(
    dist: &CategoricalDistribution,
    token: Token,
) -> Result<EventTypicality, MetricsError> {
    let ic = event_ic(dist, token)?;
    let entropy = event_entropy(dist);
    Ok(EventTypicality {
        ic,
        entropy,
        epsilon: entropy - ic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTypicality {
    pub total_ic: f64,
    pub length: usize,
    /// Information density, `total_ic / length`.
    pub id: f64,
    /// `E[ID] - id`, once an expectation is supplied.
    pub epsilon_id: Option<f64>,
}

impl SequenceTypicality {
    pub fn with_expected_id(mut self, expected_id: f64) -> Self {
        self.epsilon_id = Some(expected_id - self.id);
        self
    }
}

/// Per-event records plus the sequence summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnalysis {
    pub events: Vec<EventTypicality>,
    pub summary: SequenceTypicality,
}

/// Scores every position of `tokens` (eos included) under `model`.
pub fn analyze_sequence<M: ConditionalModel + ?Sized>(
    model: &M,
    tokens: &[Token],
) -> Result<SequenceAnalysis, MetricsError> {
    if tokens.is_empty() {
        return Err(MetricsError::InvalidArgument("empty sequence".into()));
    }
    let mut events = Vec::with_capacity(tokens.len());
    let mut total = 0.0;
    for t in 0..tokens.len() {
        let dist = model.next_distribution(&tokens[..t])?;
        let ev = event_typicality(&dist, tokens[t])?;
        total += ev.ic;
        events.push(ev);
    }
    let length = tokens.len();
    Ok(SequenceAnalysis {
        events,
        summary: SequenceTypicality {
            total_ic: total,
            length,
            id: total / length as f64,
            epsilon_id: None,
        },
    })
}

pub fn sequence_ic<M: ConditionalModel + ?Sized>(
    model: &M,
    tokens: &[Token],
) -> Result<SequenceTypicality, MetricsError> {
    analyze_sequence(model, tokens).map(|a| a.summary)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero when `n < 2`.
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_err = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(Estimate { mean, std_err, n })
    }
}

/// Where the expectation of the information density comes from.
#[derive(Debug, Clone, Copy)]
pub enum IdSource<'a> {
    /// Mean ID over a reference corpus of token sequences.
    Reference(&'a [Vec<Token>]),
    /// Mean ID over sequences sampled ancestrally from the model.
    MonteCarlo {
        samples: usize,
        seed: u64,
        max_len: usize,
    },
}

pub fn expected_id<M: ConditionalModel + Sync + ?Sized>(
    model: &M,
    source: IdSource<'_>,
) -> Result<Estimate, MetricsError> {
    let ids: Vec<f64> = match source {
        IdSource::Reference(corpus) => {
            if corpus.is_empty() {
                return Err(MetricsError::EmptySource(
                    "reference corpus is empty".into(),
                ));
            }
            corpus
                .iter()
                .map(|s| sequence_ic(model, s).map(|t| t.id))
                .collect::<Result<_, _>>()?
        }
        IdSource::MonteCarlo {
            samples,
            seed,
            max_len,
        } => {
            if samples == 0 {
                return Err(MetricsError::EmptySource("zero Monte Carlo samples".into()));
            }
            let config = SamplerConfig::new(Strategy::Conventional, max_len, seed)?;
            sampler::sample_batch(model, &config, samples)?
                .iter()
                .map(|s| sequence_ic(model, &s.tokens).map(|t| t.id))
                .collect::<Result<_, _>>()?
        }
    };
    Ok(Estimate::from_values(&ids).expect("nonempty"))
}

/// Largest vocabulary [`enumerate_exact`] accepts.
pub const MAX_ENUMERATION_VOCAB: usize = 5;
/// Longest sequence [`enumerate_exact`] accepts.
pub const MAX_ENUMERATION_LEN: usize = 6;

/// Which sequences [`enumerate_exact`] walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    /// Sequences end at the first eos; a sequence that reaches `max_len`
    /// tokens has eos forced into its final slot, mirroring
    /// [`sampler::sample_sequence`].
    UntilEos { max_len: usize },
    /// Every sequence of exactly `len` tokens; eos is an ordinary symbol.
    FixedLength { len: usize },
}

/// Exact sequence-level statistics of a small model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSequenceStats {
    /// Entropy of the (truncated) sequence distribution,
    /// `sum p(x) * -ln p(x)`.
    pub entropy: f64,
    /// `sum p(x) * IC(x)` with IC scored by the unmodified model (as
    /// [`sequence_ic`] does). Equals `entropy` unless truncation forces eos.
    pub expected_ic: f64,
    /// `sum p(x) * IC(x) / |x|`.
    pub expected_id: f64,
    /// Total probability of all enumerated sequences.
    pub total_mass: f64,
    /// Number of sequences with positive probability.
    pub sequences: usize,
}

struct Walk<'m, M: ?Sized> {
    model: &'m M,
    mode: Enumeration,
    eos: Token,
    stats: ExactSequenceStats,
}

impl<M: ConditionalModel + ?Sized> Walk<'_, M> {
    fn finish(&mut self, len: usize, log_p: f64, ic: f64) {
        let p = log_p.exp();
        self.stats.entropy += p * -log_p;
        self.stats.expected_ic += p * ic;
        self.stats.expected_id += p * ic / len as f64;
        self.stats.total_mass += p;
        self.stats.sequences += 1;
    }

    fn visit(&mut self, prefix: &mut Vec<Token>, log_p: f64, ic: f64) -> Result<(), MetricsError> {
        let dist = self.model.next_distribution(prefix)?;
        match self.mode {
            Enumeration::UntilEos { max_len } if prefix.len() + 1 == max_len => {
                let forced = event_ic(&dist, self.eos)?;
                self.finish(max_len, log_p, ic + forced);
                return Ok(());
            }
            _ => {}
        }
        for (v, &q) in dist.probs().iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let tok = Token::from_id(v as u16);
            let step = -q.ln();
            let (lp, tic) = (log_p - step, ic + step.max(0.0));
            prefix.push(tok);
            let done = match self.mode {
                Enumeration::UntilEos { .. } => tok == self.eos,
                Enumeration::FixedLength { len } => prefix.len() == len,
            };
            if done {
                self.finish(prefix.len(), lp, tic);
            } else {
                self.visit(prefix, lp, tic)?;
            }
            prefix.pop();
        }
        Ok(())
    }
}

/// Walks every sequence of a small model and sums exact expectations.
/// Refuses vocabularies above [`MAX_ENUMERATION_VOCAB`] or lengths above
/// [`MAX_ENUMERATION_LEN`].
pub fn enumerate_exact<M: ConditionalModel + ?Sized>(
    model: &M,
    mode: Enumeration,
) -> Result<ExactSequenceStats, MetricsError> {
    let k = model.vocab_size();
    if k > MAX_ENUMERATION_VOCAB {
        return Err(MetricsError::Intractable(format!(
            "vocabulary of {k} exceeds the cap of {MAX_ENUMERATION_VOCAB}"
        )));
    }
    let len = match mode {
        Enumeration::UntilEos { max_len } => max_len,
        Enumeration::FixedLength { len } => len,
    };
    if len == 0 || len > MAX_ENUMERATION_LEN {
        return Err(MetricsError::Intractable(format!(
            "length {len} outside 1..={MAX_ENUMERATION_LEN}"
        )));
    }
    let mut walk = Walk {
        model,
        mode,
        eos: model.eos(),
        stats: ExactSequenceStats {
            entropy: 0.0,
            expected_ic: 0.0,
            expected_id: 0.0,
            total_mass: 0.0,
            sequences: 0,
        },
    };
    walk.visit(&mut Vec::with_capacity(len), 0.0, 0.0)?;
    Ok(walk.stats)
}
