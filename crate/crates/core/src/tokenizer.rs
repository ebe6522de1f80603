//! Event-level tokenization of monophonic melodies.
//!
//! The vocabulary has 230 symbols laid out as
//!
//! | ids       | meaning                                      |
//! |-----------|----------------------------------------------|
//! | 0..=127   | change-pitch to MIDI pitch `id`              |
//! | 128       | rest                                         |
//! | 129..=228 | duration `d_i`, worth `10 * (i + 1)` ms      |
//! | 229       | end of sequence                              |
//!
//! A note is serialized as its pitch (or rest) token followed by one or more
//! duration tokens. The layout is frozen: serialized corpora and model files
//! depend on it.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Number of symbols in the vocabulary.
pub const VOCAB_SIZE: usize = 230;
/// Number of change-pitch tokens (MIDI 0..=127).
pub const NUM_PITCHES: u16 = 128;
/// Number of duration tokens.
pub const NUM_DURATIONS: u16 = 100;
/// Quantization step of the duration grid, in milliseconds.
pub const DURATION_STEP_MS: u32 = 10;
/// Longest duration a single token can carry.
pub const MAX_TOKEN_DURATION_MS: u32 = DURATION_STEP_MS * NUM_DURATIONS as u32;

const REST_ID: u16 = 128;
const DURATION_BASE: u16 = 129;
const EOS_ID: u16 = 229;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed input at event {index}: {reason}")]
    MalformedInput { index: usize, reason: String },
    #[error("parse error at token {index}: {reason}")]
    Parse { index: usize, reason: String },
}

/// A vocabulary symbol, identified by its integer id.
///
/// `Token` is also the id type used by the sequence model, whose vocabulary
/// may be smaller than [`VOCAB_SIZE`] (for instance in oracle tests); the
/// musical classification helpers only make sense for the full vocabulary.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(u16);

impl Token {
    pub const REST: Token = Token(REST_ID);
    pub const EOS: Token = Token(EOS_ID);

    /// Token with an id in `0..VOCAB_SIZE`.
    pub fn new(id: u16) -> Result<Self, TokenizerError> {
        if (id as usize) < VOCAB_SIZE {
            Ok(Token(id))
        } else {
            Err(TokenizerError::InvalidArgument(format!(
                "token id {id} outside 0..{VOCAB_SIZE}"
            )))
        }
    }

    /// Raw id without range checking against the music vocabulary. Models with
    /// their own vocabulary size validate ids themselves.
    pub const fn from_id(id: u16) -> Self {
        Token(id)
    }

    pub const fn id(self) -> u16 {
        self.0
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub fn pitch(midi_pitch: u8) -> Result<Self, TokenizerError> {
        if u16::from(midi_pitch) < NUM_PITCHES {
            Ok(Token(u16::from(midi_pitch)))
        } else {
            Err(TokenizerError::InvalidArgument(format!(
                "MIDI pitch {midi_pitch} outside 0..=127"
            )))
        }
    }

    pub fn duration(index: u16) -> Result<Self, TokenizerError> {
        if index < NUM_DURATIONS {
            Ok(Token(DURATION_BASE + index))
        } else {
            Err(TokenizerError::InvalidArgument(format!(
                "duration index {index} outside 0..=99"
            )))
        }
    }

    pub const fn is_pitch(self) -> bool {
        self.0 < NUM_PITCHES
    }

    pub const fn is_rest(self) -> bool {
        self.0 == REST_ID
    }

    pub const fn is_duration(self) -> bool {
        self.0 >= DURATION_BASE && self.0 < DURATION_BASE + NUM_DURATIONS
    }

    pub const fn is_eos(self) -> bool {
        self.0 == EOS_ID
    }

    /// MIDI pitch carried by a change-pitch token.
    pub fn midi_pitch(self) -> Option<u8> {
        self.is_pitch().then_some(self.0 as u8)
    }

    /// Index `i` of a duration token `d_i`.
    pub fn duration_index(self) -> Option<u16> {
        self.is_duration().then(|| self.0 - DURATION_BASE)
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.midi_pitch() {
            write!(f, "P{p}")
        } else if self.is_rest() {
            f.write_str("Rest")
        } else if let Some(d) = self.duration_index() {
            write!(f, "d{d}")
        } else if self.is_eos() {
            f.write_str("Eos")
        } else {
            write!(f, "Token({})", self.0)
        }
    }
}

/// Pitched note or rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoteKind {
    Pitched(u8),
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub kind: NoteKind,
    pub onset_ms: u64,
    pub dur_ms: u32,
}

impl NoteEvent {
    pub fn pitched(midi_pitch: u8, onset_ms: u64, dur_ms: u32) -> Self {
        NoteEvent {
            kind: NoteKind::Pitched(midi_pitch),
            onset_ms,
            dur_ms,
        }
    }

    pub fn rest(onset_ms: u64, dur_ms: u32) -> Self {
        NoteEvent {
            kind: NoteKind::Rest,
            onset_ms,
            dur_ms,
        }
    }

    pub fn end_ms(&self) -> u64 {
        self.onset_ms + u64::from(self.dur_ms)
    }
}

/// Checks the monophony invariants: positive durations, pitches in range,
/// onsets sorted and no two events sounding at once.
pub fn validate_events(events: &[NoteEvent]) -> Result<(), TokenizerError> {
    let mut prev_end: Option<u64> = None;
    for (index, ev) in events.iter().enumerate() {
        if ev.dur_ms == 0 {
            return Err(TokenizerError::MalformedInput {
                index,
                reason: "duration must be at least 1 ms".into(),
            });
        }
        if let NoteKind::Pitched(p) = ev.kind {
            if u16::from(p) >= NUM_PITCHES {
                return Err(TokenizerError::MalformedInput {
                    index,
                    reason: format!("pitch {p} outside 0..=127"),
                });
            }
        }
        if let Some(end) = prev_end {
            if ev.onset_ms < end {
                return Err(TokenizerError::MalformedInput {
                    index,
                    reason: format!(
                        "onset {} ms precedes the end of the previous event at {end} ms",
                        ev.onset_ms
                    ),
                });
            }
        }
        prev_end = Some(ev.end_ms());
    }
    Ok(())
}

/// A token sequence that satisfies `((pitch|rest) duration+)* eos`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct TokenSequence(Vec<Token>);

impl TokenSequence {
    /// Validates `tokens` against the grammar.
    pub fn new(tokens: Vec<Token>) -> Result<Self, TokenizerError> {
        check_grammar(&tokens)?;
        Ok(TokenSequence(tokens))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }
}

impl TryFrom<Vec<Token>> for TokenSequence {
    type Error = TokenizerError;

    fn try_from(tokens: Vec<Token>) -> Result<Self, Self::Error> {
        TokenSequence::new(tokens)
    }
}

impl From<TokenSequence> for Vec<Token> {
    fn from(seq: TokenSequence) -> Self {
        seq.0
    }
}

impl AsRef<[Token]> for TokenSequence {
    fn as_ref(&self) -> &[Token] {
        &self.0
    }
}

/// Milliseconds represented by duration token `d_index`.
pub fn duration_token_value(index: u16) -> Result<u32, TokenizerError> {
    if index < NUM_DURATIONS {
        Ok(DURATION_STEP_MS * (u32::from(index) + 1))
    } else {
        Err(TokenizerError::InvalidArgument(format!(
            "duration index {index} outside 0..=99"
        )))
    }
}

/// Duration tokens for a span of `dur_ms` milliseconds.
///
/// Whole seconds become `d_99` chunks; the remainder maps to the nearest grid
/// value (ties round up). A remainder under 5 ms is dropped unless nothing was
/// emitted yet, in which case the span clamps up to `d_0`.
pub fn encode_duration(dur_ms: u32) -> Result<Vec<Token>, TokenizerError> {
    if dur_ms == 0 {
        return Err(TokenizerError::InvalidArgument(
            "duration must be at least 1 ms".into(),
        ));
    }
    let chunks = dur_ms / MAX_TOKEN_DURATION_MS;
    let rem = dur_ms % MAX_TOKEN_DURATION_MS;
    let longest = Token(DURATION_BASE + NUM_DURATIONS - 1);
    let mut out = vec![longest; chunks as usize];
    let half_step = DURATION_STEP_MS / 2;
    if rem >= half_step {
        let index = (rem + half_step) / DURATION_STEP_MS - 1;
        out.push(Token(DURATION_BASE + index as u16));
    } else if out.is_empty() {
        out.push(Token(DURATION_BASE));
    }
    Ok(out)
}

/// Total milliseconds carried by a run of duration tokens. Non-duration tokens
/// are ignored.
pub fn duration_sum(tokens: &[Token]) -> u64 {
    tokens
        .iter()
        .filter_map(|t| t.duration_index())
        .map(|i| u64::from(DURATION_STEP_MS) * (u64::from(i) + 1))
        .sum()
}

/// Serializes a monophonic event list. Silent gaps of 10 ms or more between
/// events become explicit rests; shorter gaps are absorbed. Silence before
/// the first event is not represented.
pub fn encode(events: &[NoteEvent]) -> Result<TokenSequence, TokenizerError> {
    validate_events(events)?;
    let mut tokens = Vec::with_capacity(events.len() * 2 + 1);
    let mut prev_end: Option<u64> = None;
    for ev in events {
        if let Some(end) = prev_end {
            let gap = ev.onset_ms - end;
            if gap >= u64::from(DURATION_STEP_MS) {
                let gap = u32::try_from(gap).map_err(|_| {
                    TokenizerError::InvalidArgument(format!("gap of {gap} ms is too long"))
                })?;
                tokens.push(Token::REST);
                tokens.extend(encode_duration(gap)?);
            }
        }
        tokens.push(match ev.kind {
            NoteKind::Pitched(p) => Token(u16::from(p)),
            NoteKind::Rest => Token::REST,
        });
        tokens.extend(encode_duration(ev.dur_ms)?);
        prev_end = Some(ev.end_ms());
    }
    tokens.push(Token::EOS);
    Ok(TokenSequence(tokens))
}

fn check_grammar(tokens: &[Token]) -> Result<(), TokenizerError> {
    parse_events(tokens).map(|_| ())
}

fn parse_events(tokens: &[Token]) -> Result<Vec<NoteEvent>, TokenizerError> {
    let mut events = Vec::new();
    let mut onset = 0u64;
    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i];
        if tok.index() >= VOCAB_SIZE {
            return Err(TokenizerError::Parse {
                index: i,
                reason: format!("token id {} outside the vocabulary", tok.id()),
            });
        }
        if tok.is_eos() {
            if i + 1 != tokens.len() {
                return Err(TokenizerError::Parse {
                    index: i + 1,
                    reason: "tokens after end of sequence".into(),
                });
            }
            return Ok(events);
        }
        if tok.is_duration() {
            return Err(TokenizerError::Parse {
                index: i,
                reason: "duration token without a preceding pitch or rest".into(),
            });
        }
        let kind = match tok.midi_pitch() {
            Some(p) => NoteKind::Pitched(p),
            None => NoteKind::Rest,
        };
        let start = i;
        i += 1;
        let mut dur = 0u64;
        while i < tokens.len() && tokens[i].is_duration() {
            dur += duration_sum(&tokens[i..=i]);
            i += 1;
        }
        if i == start + 1 {
            return Err(TokenizerError::Parse {
                index: start,
                reason: "pitch or rest token not followed by a duration".into(),
            });
        }
        let dur_ms = u32::try_from(dur).map_err(|_| TokenizerError::Parse {
            index: start,
            reason: "duration overflows".into(),
        })?;
        events.push(NoteEvent {
            kind,
            onset_ms: onset,
            dur_ms,
        });
        onset += dur;
    }
    Err(TokenizerError::Parse {
        index: tokens.len(),
        reason: "missing end-of-sequence token".into(),
    })
}

/// Inverse of [`encode`]: onsets are accumulated from durations starting at 0.
pub fn decode(tokens: &[Token]) -> Result<Vec<NoteEvent>, TokenizerError> {
    parse_events(tokens)
}
