//! Interpolated, additively smoothed n-gram model.
//!
//! With `K` tokens, `C` training tokens and counts `c(.)`:
//!
//! ```text
//! q_0(v)         = (c(v) + 1) / (C + K)
//! q_k(v | ctx_k) = (c(ctx_k v) + alpha * q_{k-1}(v | ctx_{k-1})) / (c(ctx_k .) + alpha)
//! ```
//!
//! where `ctx_k` is the last `k` context tokens. The model returns
//! `q_{order-1}`. Contexts shorter than `k` are left-padded with a pad symbol
//! that is not part of the vocabulary.

use super::{CategoricalDistribution, ConditionalModel, ModelError};
use crate::tokenizer::{Token, VOCAB_SIZE};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const MODEL_MAGIC: &str = "melotyp-ngram";
pub const MODEL_FORMAT_VERSION: u64 = 1;

const PAD: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct ContextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(u16, u64)>,
}

impl ContextCounts {
    fn add(&mut self, token: u16) {
        self.total += 1;
        match self.next.binary_search_by_key(&token, |(t, _)| *t) {
            Ok(i) => self.next[i].1 += 1,
            Err(i) => self.next.insert(i, (token, 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    unigram: Vec<u64>,
    total: u64,
    /// `tables[k - 1]` holds counts for contexts of length `k`.
    tables: Vec<HashMap<Box<[u16]>, ContextCounts>>,
}

impl NGramModel {
    /// Trains over the full 230-token music vocabulary.
    pub fn train<S: AsRef<[Token]>>(
        sequences: &[S],
        order: usize,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        Self::train_with_vocab(sequences, order, alpha, VOCAB_SIZE)
    }

    /// Trains over a vocabulary of `vocab_size` ids whose last id is eos.
    pub fn train_with_vocab<S: AsRef<[Token]>>(
        sequences: &[S],
        order: usize,
        alpha: f64,
        vocab_size: usize,
    ) -> Result<Self, ModelError> {
        if order == 0 {
            return Err(ModelError::InvalidArgument(
                "order must be at least 1".into(),
            ));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(2..=PAD as usize).contains(&vocab_size) {
            return Err(ModelError::InvalidArgument(format!(
                "vocabulary size {vocab_size} not supported"
            )));
        }
        let eos = Token::from_id((vocab_size - 1) as u16);
        let mut model = NGramModel {
            order,
            alpha,
            vocab_size,
            unigram: vec![0; vocab_size],
            total: 0,
            tables: vec![HashMap::new(); order - 1],
        };
        let mut nonempty = 0usize;
        let mut window = vec![PAD; order - 1];
        for (s, seq) in sequences.iter().enumerate() {
            let seq = seq.as_ref();
            if seq.is_empty() {
                continue;
            }
            nonempty += 1;
            if let Some((i, t)) = seq
                .iter()
                .enumerate()
                .find(|(_, t)| t.index() >= vocab_size)
            {
                return Err(ModelError::Training(format!(
                    "sequence {s}, position {i}: token {} outside the vocabulary",
                    t.id()
                )));
            }
            if seq.last() != Some(&eos) {
                return Err(ModelError::Training(format!(
                    "sequence {s} does not end with the end-of-sequence token"
                )));
            }
            window.fill(PAD);
            for &tok in seq {
                model.unigram[tok.index()] += 1;
                model.total += 1;
                for k in 1..order {
                    let key = &window[window.len() - k..];
                    match model.tables[k - 1].get_mut(key) {
                        Some(cc) => cc.add(tok.id()),
                        None => {
                            let mut cc = ContextCounts::default();
                            cc.add(tok.id());
                            model.tables[k - 1].insert(key.into(), cc);
                        }
                    }
                }
                if !window.is_empty() {
                    window.rotate_left(1);
                    *window.last_mut().expect("nonempty") = tok.id();
                }
            }
        }
        if nonempty == 0 {
            return Err(ModelError::Training(
                "no nonempty training sequences".into(),
            ));
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Total number of training tokens.
    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn unigram_count(&self, token: Token) -> u64 {
        self.unigram.get(token.index()).copied().unwrap_or(0)
    }

    /// Count of `token` following exactly `context` (length `1..order`).
    /// Use [`unigram_count`](Self::unigram_count) for the empty context.
    pub fn count(&self, context: &[Token], token: Token) -> u64 {
        let k = context.len();
        if k == 0 {
            return self.unigram_count(token);
        }
        if k >= self.order {
            return 0;
        }
        let key: Vec<u16> = context.iter().map(|t| t.id()).collect();
        self.tables[k - 1]
            .get(key.as_slice())
            .and_then(|cc| {
                cc.next
                    .binary_search_by_key(&token.id(), |(t, _)| *t)
                    .ok()
                    .map(|i| cc.next[i].1)
            })
            .unwrap_or(0)
    }

    fn check_context(&self, context: &[Token]) -> Result<(), ModelError> {
        match context
            .iter()
            .enumerate()
            .find(|(_, t)| t.index() >= self.vocab_size)
        {
            Some((i, t)) => Err(ModelError::InvalidArgument(format!(
                "context position {i}: token {} outside a vocabulary of {}",
                t.id(),
                self.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// The interpolated distribution of order `level + 1` (`level < order`).
    /// `next_distribution` is `distribution_at_level(context, order - 1)`.
    pub fn distribution_at_level(
        &self,
        context: &[Token],
        level: usize,
    ) -> Result<CategoricalDistribution, ModelError> {
        if level >= self.order {
            return Err(ModelError::InvalidArgument(format!(
                "level {level} exceeds model order {}",
                self.order
            )));
        }
        self.check_context(context)?;
        let k_max = self.order - 1;
        let mut key = vec![PAD; k_max];
        let take = context.len().min(k_max);
        for (slot, tok) in key[k_max - take..]
            .iter_mut()
            .zip(&context[context.len() - take..])
        {
            *slot = tok.id();
        }

        let denom = (self.total + self.vocab_size as u64) as f64;
        let mut q: Vec<f64> = self
            .unigram
            .iter()
            .map(|&c| (c as f64 + 1.0) / denom)
            .collect();
        for k in 1..=level {
            let Some(cc) = self.tables[k - 1].get(&key[k_max - k..]) else {
                continue;
            };
            let denom = cc.total as f64 + self.alpha;
            for p in q.iter_mut() {
                *p = self.alpha * *p / denom;
            }
            for &(tok, c) in &cc.next {
                q[tok as usize] += c as f64 / denom;
            }
        }
        Ok(CategoricalDistribution::from_vec_unchecked(q))
    }

    fn to_file(&self) -> ModelFile {
        let tables = self
            .tables
            .iter()
            .map(|table| {
                let mut rows: Vec<ContextRow> = table
                    .iter()
                    .map(|(ctx, cc)| ContextRow {
                        context: ctx
                            .iter()
                            .map(|&t| if t == PAD { -1 } else { i32::from(t) })
                            .collect(),
                        counts: cc.next.clone(),
                    })
                    .collect();
                rows.sort_by(|a, b| a.context.cmp(&b.context));
                rows
            })
            .collect();
        ModelFile {
            magic: MODEL_MAGIC.to_string(),
            version: MODEL_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocab_size: self.vocab_size,
            unigram: self.unigram.clone(),
            tables,
        }
    }

    /// Canonical JSON encoding (contexts sorted, compact).
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_file()).expect("model serializes")
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let header: FileHeader =
            serde_json::from_slice(bytes).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        if header.magic != MODEL_MAGIC {
            return Err(ModelError::Corrupt(format!(
                "bad magic {:?}, expected {MODEL_MAGIC:?}",
                header.magic
            )));
        }
        if header.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version {
                found: header.version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_slice(bytes).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        let corrupt = |m: String| Err(ModelError::Corrupt(m));
        if file.order == 0 {
            return corrupt("order 0".into());
        }
        if !(file.alpha.is_finite() && file.alpha > 0.0) {
            return corrupt(format!("alpha {}", file.alpha));
        }
        let k_size = file.vocab_size;
        if !(2..PAD as usize).contains(&k_size) || file.unigram.len() != k_size {
            return corrupt("vocabulary size and unigram table disagree".into());
        }
        if file.tables.len() != file.order - 1 {
            return corrupt(format!(
                "{} context tables for order {}",
                file.tables.len(),
                file.order
            ));
        }
        let total: u64 = file.unigram.iter().sum();
        let mut tables = Vec::with_capacity(file.tables.len());
        for (i, rows) in file.tables.into_iter().enumerate() {
            let k = i + 1;
            let mut table = HashMap::with_capacity(rows.len());
            let mut table_total = 0u64;
            for row in rows {
                if row.context.len() != k {
                    return corrupt(format!(
                        "context of length {} in table {k}",
                        row.context.len()
                    ));
                }
                let pads = row.context.iter().take_while(|&&t| t == -1).count();
                let mut key = Vec::with_capacity(k);
                for (j, &t) in row.context.iter().enumerate() {
                    if t == -1 && j < pads {
                        key.push(PAD);
                    } else if t >= 0 && (t as usize) < k_size {
                        key.push(t as u16);
                    } else {
                        return corrupt(format!("bad context token {t} in table {k}"));
                    }
                }
                if row.counts.is_empty()
                    || row.counts.windows(2).any(|w| w[0].0 >= w[1].0)
                    || row
                        .counts
                        .iter()
                        .any(|&(t, c)| c == 0 || t as usize >= k_size)
                {
                    return corrupt(format!("bad counts for a context in table {k}"));
                }
                let row_total: u64 = row.counts.iter().map(|(_, c)| c).sum();
                table_total += row_total;
                let cc = ContextCounts {
                    total: row_total,
                    next: row.counts,
                };
                if table.insert(key.into_boxed_slice(), cc).is_some() {
                    return corrupt(format!("duplicate context in table {k}"));
                }
            }
            if table_total != total {
                return corrupt(format!(
                    "table {k} holds {table_total} events, unigram table {total}"
                ));
            }
            tables.push(table);
        }
        Ok(NGramModel {
            order: file.order,
            alpha: file.alpha,
            vocab_size: k_size,
            unigram: file.unigram,
            total,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_bytes(&bytes)
    }
}

impl ConditionalModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, context: &[Token]) -> Result<CategoricalDistribution, ModelError> {
        self.distribution_at_level(context, self.order - 1)
    }
}

#[derive(Deserialize)]
struct FileHeader {
    magic: String,
    version: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    magic: String,
    version: u64,
    order: usize,
    alpha: f64,
    vocab_size: usize,
    unigram: Vec<u64>,
    tables: Vec<Vec<ContextRow>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRow {
    /// Pad positions are written as -1.
    context: Vec<i32>,
    counts: Vec<(u16, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Token;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn t(id: u16) -> Token {
        Token::from_id(id)
    }

    fn seq(ids: &[u16]) -> Vec<Token> {
        ids.iter().map(|&i| t(i)).collect()
    }

    #[test]
    fn unigram_hand_counts() {
        let m = NGramModel::train(&[seq(&[60, 178, 229])], 1, 1.0).unwrap();
        let d = m.next_distribution(&[]).unwrap();
        for v in 0..230u16 {
            let c = if [60, 178, 229].contains(&v) {
                1.0
            } else {
                0.0
            };
            assert!((d.probs()[v as usize] - (c + 1.0) / 233.0).abs() < 1e-15);
        }
        let other = m.next_distribution(&seq(&[1, 2, 3])).unwrap();
        assert_eq!(d, other);
    }

    #[test]
    fn order_two_hand_counts() {
        // contexts: PAD->0, 0->1, 1->2(eos) ; PAD->1, 1->2
        let m = NGramModel::train_with_vocab(&[seq(&[0, 1, 2]), seq(&[1, 2])], 2, 2.0, 3).unwrap();
        // unigram counts 0:1 1:2 2:2, C = 5, K = 3
        let q0 = [2.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0];
        // after token 1: c(1 .) = 2, all eos
        let d = m.next_distribution(&seq(&[1])).unwrap();
        let want = [
            2.0 * q0[0] / 4.0,
            2.0 * q0[1] / 4.0,
            (2.0 + 2.0 * q0[2]) / 4.0,
        ];
        for (g, w) in d.probs().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        // sequence start: pad context seen twice, once with 0, once with 1
        let d = m.next_distribution(&[]).unwrap();
        let want = [
            (1.0 + 2.0 * q0[0]) / 4.0,
            (1.0 + 2.0 * q0[1]) / 4.0,
            2.0 * q0[2] / 4.0,
        ];
        for (g, w) in d.probs().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(m.count(&seq(&[1]), t(2)), 2);
        assert_eq!(m.total_tokens(), 5);
    }

    #[test]
    fn unseen_context_falls_back_exactly() {
        let m = NGramModel::train(&[seq(&[60, 178, 229]), seq(&[62, 178, 229])], 3, 1.0).unwrap();
        let unseen = m.next_distribution(&seq(&[100, 101])).unwrap();
        let lower = m.distribution_at_level(&seq(&[100, 101]), 0).unwrap();
        assert_eq!(unseen, lower);
        // seen bigram context 178, unseen trigram (100, 178)
        let a = m.next_distribution(&seq(&[100, 178])).unwrap();
        let b = m.distribution_at_level(&seq(&[178]), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn doubled_corpus_equals_doubled_counts() {
        let s = seq(&[60, 178, 61, 140, 229]);
        let once = NGramModel::train(std::slice::from_ref(&s), 3, 1.0).unwrap();
        let twice = NGramModel::train(&[s.clone(), s.clone()], 3, 1.0).unwrap();
        assert_eq!(twice.total_tokens(), 2 * once.total_tokens());
        for ctx in [vec![], seq(&[60]), seq(&[60, 178]), seq(&[178, 61])] {
            for v in 0..230 {
                assert_eq!(twice.count(&ctx, t(v)), 2 * once.count(&ctx, t(v)));
            }
        }
    }

    #[test]
    fn large_alpha_converges_to_lower_order() {
        let data = [seq(&[60, 178, 62, 150, 229]), seq(&[62, 178, 60, 178, 229])];
        let m2 = NGramModel::train(&data, 2, 1e12).unwrap();
        let m1 = NGramModel::train(&data, 1, 1.0).unwrap();
        let a = m2.next_distribution(&seq(&[178])).unwrap();
        let b = m1.next_distribution(&[]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn normalized_and_positive_on_random_contexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<Token>> = (0..50)
            .map(|_| {
                let mut s: Vec<Token> = (0..rng.random_range(1..30))
                    .map(|_| t(rng.random_range(0..229)))
                    .collect();
                s.push(Token::EOS);
                s
            })
            .collect();
        let m = NGramModel::train(&data, 4, 0.5).unwrap();
        for _ in 0..1000 {
            let ctx: Vec<Token> = (0..rng.random_range(0..6))
                .map(|_| t(rng.random_range(0..230)))
                .collect();
            let d = m.next_distribution(&ctx).unwrap();
            let sum: f64 = d.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
            assert!(d.probs().iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn uniform_training_gives_near_uniform_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s: Vec<Token> = (0..100_000).map(|_| t(rng.random_range(0..230))).collect();
        s.push(Token::EOS);
        let m = NGramModel::train(&[s], 1, 1.0).unwrap();
        let d = m.next_distribution(&[]).unwrap();
        let max_dev = d
            .probs()
            .iter()
            .map(|p| (p - 1.0 / 230.0).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 0.01, "{max_dev}");
    }

    #[test]
    fn training_errors() {
        let empty: [Vec<Token>; 0] = [];
        assert!(matches!(
            NGramModel::train(&empty, 2, 1.0),
            Err(ModelError::Training(_))
        ));
        assert!(matches!(
            NGramModel::train(&[Vec::<Token>::new()], 2, 1.0),
            Err(ModelError::Training(_))
        ));
        assert!(NGramModel::train(&[seq(&[60, 178])], 2, 1.0).is_err());
        assert!(NGramModel::train(&[seq(&[229])], 0, 1.0).is_err());
        assert!(NGramModel::train(&[seq(&[229])], 2, 0.0).is_err());
        let m = NGramModel::train(&[seq(&[229])], 2, 1.0).unwrap();
        assert!(matches!(
            m.next_distribution(&seq(&[230])),
            Err(ModelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Vec<Token>> = (0..20)
            .map(|_| {
                let mut s: Vec<Token> = (0..40).map(|_| t(rng.random_range(0..229))).collect();
                s.push(Token::EOS);
                s
            })
            .collect();
        let m = NGramModel::train(&data, 3, 0.37).unwrap();
        let bytes = m.to_json_bytes();
        let back = NGramModel::from_json_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_bytes(), bytes);
        for _ in 0..100 {
            let ctx: Vec<Token> = (0..3).map(|_| t(rng.random_range(0..230))).collect();
            assert_eq!(
                m.next_distribution(&ctx).unwrap(),
                back.next_distribution(&ctx).unwrap()
            );
        }
    }

    #[test]
    fn load_rejects_truncated_and_future_files() {
        let m = NGramModel::train(&[seq(&[60, 178, 229])], 2, 1.0).unwrap();
        let bytes = m.to_json_bytes();
        assert!(matches!(
            NGramModel::from_json_bytes(&bytes[..bytes.len() / 2]),
            Err(ModelError::Corrupt(_))
        ));
        let text = String::from_utf8(bytes).unwrap();
        let future = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            NGramModel::from_json_bytes(future.as_bytes()),
            Err(ModelError::Version { found: 2, .. })
        ));
        let tampered = text.replace("\"unigram\":[", "\"unigram\":[5,");
        assert!(NGramModel::from_json_bytes(tampered.as_bytes()).is_err());
    }
}
