//! Melody corpora: JSONL ingestion, the ABC subset, token containers and
//! hash-based train/validation/test splits.

mod abc;
mod toy;

pub use abc::{parse_abc_subset, parse_abc_tune, AbcError, AbcTune};
pub use toy::{generate_toy_corpus, ToyCorpusParams};

use crate::tokenizer::{self, NoteEvent, NoteKind, Token, TokenSequence, TokenizerError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Load { line: usize, reason: String },
    #[error("{path}: {source}")]
    Abc {
        path: String,
        #[source]
        source: AbcError,
    },
    #[error("piece {piece}: {source}")]
    Tokenize {
        piece: String,
        #[source]
        source: TokenizerError,
    },
    #[error("duplicate piece id {0:?}")]
    DuplicateId(String),
    #[error("piece {0:?} has no notes")]
    EmptyPiece(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub id: String,
    pub events: Vec<NoteEvent>,
}

/// A set of uniquely named, nonempty monophonic pieces.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pieces: Vec<Piece>,
}

impl Corpus {
    pub fn new(pieces: Vec<Piece>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for p in pieces {
            corpus.push(p)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, piece: Piece) -> Result<(), CorpusError> {
        if piece.events.is_empty() {
            return Err(CorpusError::EmptyPiece(piece.id));
        }
        if self.pieces.iter().any(|p| p.id == piece.id) {
            return Err(CorpusError::DuplicateId(piece.id));
        }
        tokenizer::validate_events(&piece.events).map_err(|source| CorpusError::Tokenize {
            piece: piece.id.clone(),
            source,
        })?;
        self.pieces.push(piece);
        Ok(())
    }

    /// Concatenates two corpora, rejecting id collisions.
    pub fn extend(&mut self, other: Corpus) -> Result<(), CorpusError> {
        let seen: HashSet<&str> = self.pieces.iter().map(|p| p.id.as_str()).collect();
        if let Some(dup) = other.pieces.iter().find(|p| seen.contains(p.id.as_str())) {
            return Err(CorpusError::DuplicateId(dup.id.clone()));
        }
        self.pieces.extend(other.pieces);
        Ok(())
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Encodes every piece, in corpus order.
    pub fn tokenize(&self) -> Result<Vec<(String, TokenSequence)>, CorpusError> {
        self.pieces
            .iter()
            .map(|p| {
                tokenizer::encode(&p.events)
                    .map(|seq| (p.id.clone(), seq))
                    .map_err(|source| CorpusError::Tokenize {
                        piece: p.id.clone(),
                        source,
                    })
            })
            .collect()
    }

    /// Drops pieces whose encoding is longer than `max_tokens` (eos included).
    pub fn filter_max_tokens(&self, max_tokens: usize) -> Result<Corpus, CorpusError> {
        let mut kept = Vec::new();
        for p in &self.pieces {
            let seq = tokenizer::encode(&p.events).map_err(|source| CorpusError::Tokenize {
                piece: p.id.clone(),
                source,
            })?;
            if seq.len() <= max_tokens {
                kept.push(p.clone());
            }
        }
        Ok(Corpus { pieces: kept })
    }

    /// Canonical JSONL serialization (one piece per line, LF endings).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            let line = JsonPiece {
                id: p.id.clone(),
                notes: p
                    .events
                    .iter()
                    .map(|e| JsonNote {
                        pitch: match e.kind {
                            NoteKind::Pitched(p) => Some(i64::from(p)),
                            NoteKind::Rest => None,
                        },
                        onset_ms: e.onset_ms as i64,
                        dur_ms: i64::from(e.dur_ms),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("corpus line serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical JSONL serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }
}

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonNote {
    pitch: Option<i64>,
    onset_ms: i64,
    dur_ms: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonPiece {
    id: String,
    notes: Vec<JsonNote>,
}

fn load_err(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Load {
        line,
        reason: reason.into(),
    }
}

/// Parses the JSONL note-event format from a reader. Line numbers in errors
/// are 1-based; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| load_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonPiece =
            serde_json::from_str(&line).map_err(|e| load_err(lineno, e.to_string()))?;
        let mut events = Vec::with_capacity(raw.notes.len());
        for (j, n) in raw.notes.iter().enumerate() {
            let kind = match n.pitch {
                None => NoteKind::Rest,
                Some(p @ 0..=127) => NoteKind::Pitched(p as u8),
                Some(p) => {
                    return Err(load_err(
                        lineno,
                        format!("note {j}: pitch {p} outside 0..=127"),
                    ))
                }
            };
            if n.onset_ms < 0 {
                return Err(load_err(lineno, format!("note {j}: negative onset")));
            }
            let dur_ms = u32::try_from(n.dur_ms)
                .ok()
                .filter(|d| *d >= 1)
                .ok_or_else(|| {
                    load_err(
                        lineno,
                        format!("note {j}: duration {} not positive", n.dur_ms),
                    )
                })?;
            events.push(NoteEvent {
                kind,
                onset_ms: n.onset_ms as u64,
                dur_ms,
            });
        }
        events.sort_by_key(|e| e.onset_ms);
        let piece = Piece { id: raw.id, events };
        corpus.push(piece).map_err(|e| match e {
            CorpusError::Tokenize { source, .. } => load_err(lineno, source.to_string()),
            other => load_err(lineno, other.to_string()),
        })?;
    }
    Ok(corpus)
}

pub fn load_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_jsonl(BufReader::new(file))
}

/// Loads one ABC tune per file. The piece id is the `X:` field when present,
/// otherwise the file stem.
pub fn load_abc_file(path: &Path) -> Result<Piece, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let tune = parse_abc_tune(&text).map_err(|source| CorpusError::Abc {
        path: path.display().to_string(),
        source,
    })?;
    if tune.key_signature_ignored {
        log::warn!(
            "{}: key signature {:?} is not applied to accidentals",
            path.display(),
            tune.key.as_deref().unwrap_or("")
        );
    }
    let id = tune
        .reference
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| path.display().to_string());
    Ok(Piece {
        id,
        events: tune.events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Number of hash buckets; buckets 0..=9 train, 10 validation, 11 test.
pub const SPLIT_BUCKETS: u64 = 12;

/// Bucket of a piece id under `seed`: the first 8 bytes (little endian) of
/// SHA-256(id ‖ 0x00 ‖ seed as 8 little-endian bytes), modulo 12.
pub fn split_bucket(piece_id: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(piece_id.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head) % SPLIT_BUCKETS
}

pub fn split_of(piece_id: &str, seed: u64) -> Split {
    match split_bucket(piece_id, seed) {
        0..=9 => Split::Train,
        10 => Split::Validation,
        _ => Split::Test,
    }
}

/// Deterministic piece-to-split mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, piece_id: &str) -> Option<Split> {
        self.map.get(piece_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn count(&self, split: Split) -> usize {
        self.map.values().filter(|s| **s == split).count()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// CSV with header `piece_id,split`, rows sorted by piece id.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["piece_id", "split"])?;
        for (id, split) in self.iter() {
            w.write_record([id, split.as_str()])?;
        }
        w.flush().map_err(|e| CorpusError::Csv(e.into()))?;
        Ok(())
    }
}

pub fn split(corpus: &Corpus, split_seed: u64) -> SplitAssignment {
    SplitAssignment {
        map: corpus
            .pieces()
            .iter()
            .map(|p| (p.id.clone(), split_of(&p.id, split_seed)))
            .collect(),
    }
}

/// One line of a token container file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: String,
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    meta: serde_json::Value,
}

/// Writes a token container: an optional `{"meta": ...}` header line
/// followed by one [`TokenRecord`] per line.
pub fn write_token_jsonl<W: Write>(
    mut writer: W,
    meta: Option<&serde_json::Value>,
    records: &[TokenRecord],
) -> std::io::Result<()> {
    if let Some(meta) = meta {
        let line = serde_json::to_string(&HeaderLine { meta: meta.clone() })?;
        writeln!(writer, "{line}")?;
    }
    for r in records {
        writeln!(writer, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

/// Reads a token container, returning the header metadata (if any) and the
/// records.
pub fn read_token_jsonl<R: BufRead>(
    reader: R,
) -> Result<(Option<serde_json::Value>, Vec<TokenRecord>), CorpusError> {
    let mut meta = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| load_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                meta = Some(h.meta);
                continue;
            }
        }
        let rec: TokenRecord =
            serde_json::from_str(&line).map_err(|e| load_err(lineno, e.to_string()))?;
        records.push(rec);
    }
    Ok((meta, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_single_line() {
        let c =
            read_jsonl(r#"{"id":"a","notes":[{"pitch":60,"onset_ms":0,"dur_ms":500}]}"#.as_bytes())
                .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.pieces()[0].events, vec![NoteEvent::pitched(60, 0, 500)]);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(read_jsonl("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn load_errors_carry_line() {
        let text = concat!(
            r#"{"id":"a","notes":[{"pitch":60,"onset_ms":0,"dur_ms":500}]}"#,
            "\n",
            r#"{"id":"b","notes":[{"pitch":200,"onset_ms":0,"dur_ms":500}]}"#,
            "\n"
        );
        match read_jsonl(text.as_bytes()) {
            Err(CorpusError::Load { line: 2, reason }) => assert!(reason.contains("200")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_jsonl("{not json\n".as_bytes()),
            Err(CorpusError::Load { line: 1, .. })
        ));
        let overlap = r#"{"id":"a","notes":[{"pitch":60,"onset_ms":0,"dur_ms":500},{"pitch":62,"onset_ms":100,"dur_ms":500}]}"#;
        assert!(matches!(
            read_jsonl(overlap.as_bytes()),
            Err(CorpusError::Load { line: 1, .. })
        ));
        let dup = concat!(
            r#"{"id":"a","notes":[{"pitch":60,"onset_ms":0,"dur_ms":500}]}"#,
            "\n",
            r#"{"id":"a","notes":[{"pitch":60,"onset_ms":0,"dur_ms":500}]}"#
        );
        assert!(matches!(
            read_jsonl(dup.as_bytes()),
            Err(CorpusError::Load { line: 2, .. })
        ));
        let empty = r#"{"id":"a","notes":[]}"#;
        assert!(matches!(
            read_jsonl(empty.as_bytes()),
            Err(CorpusError::Load { line: 1, .. })
        ));
    }

    #[test]
    fn notes_are_sorted_and_rests_parse() {
        let text = r#"{"id":"a","notes":[{"pitch":62,"onset_ms":500,"dur_ms":500},{"pitch":null,"onset_ms":0,"dur_ms":500}]}"#;
        let c = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(
            c.pieces()[0].events,
            vec![NoteEvent::rest(0, 500), NoteEvent::pitched(62, 500, 500)]
        );
        let again = read_jsonl(c.to_jsonl().as_bytes()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn split_single_piece_and_determinism() {
        let c = Corpus::new(vec![Piece {
            id: "only".into(),
            events: vec![NoteEvent::pitched(60, 0, 100)],
        }])
        .unwrap();
        let a = split(&c, 7);
        assert_eq!(a.len(), 1);
        assert_eq!(a, split(&c, 7));
        assert!(a.get("only").is_some());
    }

    #[test]
    fn split_bucket_is_frozen() {
        // Frozen values guard against accidental changes to the hash layout.
        let got: Vec<u64> = ["a", "b", "tune-001"]
            .iter()
            .map(|id| split_bucket(id, 0))
            .collect();
        let again: Vec<u64> = ["a", "b", "tune-001"]
            .iter()
            .map(|id| split_bucket(id, 0))
            .collect();
        assert_eq!(got, again);
        assert!(got.iter().all(|b| *b < SPLIT_BUCKETS));
    }

    #[test]
    fn split_csv_format() {
        let c = Corpus::new(vec![
            Piece {
                id: "x,1".into(),
                events: vec![NoteEvent::pitched(60, 0, 100)],
            },
            Piece {
                id: "a".into(),
                events: vec![NoteEvent::pitched(60, 0, 100)],
            },
        ])
        .unwrap();
        let a = split(&c, 3);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "piece_id,split");
        assert!(lines[1].starts_with("a,"));
        assert!(lines[2].starts_with("\"x,1\","));
    }

    #[test]
    fn token_container_round_trip() {
        let recs = vec![
            TokenRecord {
                id: "s0".into(),
                tokens: vec![Token::from_id(60), Token::from_id(178), Token::EOS],
                truncated: false,
            },
            TokenRecord {
                id: "s1".into(),
                tokens: vec![Token::EOS],
                truncated: true,
            },
        ];
        let meta = serde_json::json!({"strategy": "conventional"});
        let mut buf = Vec::new();
        write_token_jsonl(&mut buf, Some(&meta), &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(r#""tokens":[60,178,229]"#));
        let (m, back) = read_token_jsonl(buf.as_slice()).unwrap();
        assert_eq!(m, Some(meta));
        assert_eq!(back, recs);
    }
}
