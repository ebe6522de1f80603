//! A restricted ABC notation reader covering single-voice notes, rests and
//! duration multipliers.
//!
//! Supported: header fields `X: T: M: L: Q: K:`, notes `A-G a-g` with explicit
//! accidentals (`^ ^^ _ __ =`), octave marks (`'` and `,`), length multipliers
//! (`2`, `/`, `//`, `/4`, `3/2`), rests `z` and whole-bar rests `Z`, bar lines,
//! whitespace and `%` comments. Everything else is rejected with the byte
//! offset of the construct.
//!
//! The key signature is recorded but never applied to notes.

use crate::tokenizer::NoteEvent;
use num_rational::Ratio;
use thiserror::Error;

type Frac = Ratio<u64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbcError {
    #[error("{construct} unsupported (byte {offset})")]
    Unsupported {
        construct: &'static str,
        offset: usize,
    },
    #[error("{reason} (byte {offset})")]
    Syntax { reason: String, offset: usize },
}

impl AbcError {
    pub fn offset(&self) -> usize {
        match self {
            AbcError::Unsupported { offset, .. } | AbcError::Syntax { offset, .. } => *offset,
        }
    }
}

fn syntax(reason: impl Into<String>, offset: usize) -> AbcError {
    AbcError::Syntax {
        reason: reason.into(),
        offset,
    }
}

fn unsupported(construct: &'static str, offset: usize) -> AbcError {
    AbcError::Unsupported { construct, offset }
}

/// A parsed tune with the header fields that were read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbcTune {
    pub reference: Option<String>,
    pub title: Option<String>,
    pub meter: Option<String>,
    pub key: Option<String>,
    pub events: Vec<NoteEvent>,
    /// Set when `K:` names a key with accidentals; those accidentals were not
    /// applied.
    pub key_signature_ignored: bool,
}

/// Parses a tune and returns only its note events.
pub fn parse_abc_subset(text: &str) -> Result<Vec<NoteEvent>, AbcError> {
    parse_abc_tune(text).map(|t| t.events)
}

struct State {
    unit: Frac,
    /// Tempo as (beat length, beats per minute).
    tempo: (Frac, u64),
    /// Bar length, when the meter is known.
    bar: Option<Frac>,
    /// Elapsed time in whole notes.
    now: Frac,
    events: Vec<NoteEvent>,
}

impl State {
    fn ms_at(&self, t: Frac) -> u64 {
        let (beat, bpm) = self.tempo;
        let ms = t / beat * Frac::from_integer(60_000) / Frac::from_integer(bpm);
        ms.round().to_integer()
    }

    fn push(&mut self, pitch: Option<u8>, len: Frac, offset: usize) -> Result<(), AbcError> {
        let start = self.ms_at(self.now);
        let end_t = self.now + len;
        let end = self.ms_at(end_t);
        if end <= start {
            return Err(syntax("note shorter than 1 ms", offset));
        }
        let dur_ms = u32::try_from(end - start).map_err(|_| syntax("note too long", offset))?;
        self.events.push(match pitch {
            Some(p) => NoteEvent::pitched(p, start, dur_ms),
            None => NoteEvent::rest(start, dur_ms),
        });
        self.now = end_t;
        Ok(())
    }
}

fn parse_fraction(s: &str, offset: usize) -> Result<Frac, AbcError> {
    let (n, d) = s
        .trim()
        .split_once('/')
        .ok_or_else(|| syntax(format!("expected a fraction, found {s:?}"), offset))?;
    let n: u64 = n
        .trim()
        .parse()
        .map_err(|_| syntax(format!("bad numerator in {s:?}"), offset))?;
    let d: u64 = d
        .trim()
        .parse()
        .map_err(|_| syntax(format!("bad denominator in {s:?}"), offset))?;
    if n == 0 || d == 0 {
        return Err(syntax(format!("zero in fraction {s:?}"), offset));
    }
    Ok(Frac::new(n, d))
}

fn parse_meter(value: &str, offset: usize) -> Result<Option<Frac>, AbcError> {
    match value.trim() {
        "C" => Ok(Some(Frac::new(4, 4))),
        "C|" => Ok(Some(Frac::new(2, 2))),
        "none" | "" => Ok(None),
        other => parse_fraction(other, offset).map(Some),
    }
}

fn parse_tempo(value: &str, unit: Frac, offset: usize) -> Result<(Frac, u64), AbcError> {
    // drop quoted text such as "Allegro"
    let mut plain = String::new();
    let mut in_quote = false;
    for c in value.chars() {
        if c == '"' {
            in_quote = !in_quote;
        } else if !in_quote {
            plain.push(c);
        }
    }
    let bad = || syntax(format!("bad tempo {value:?}"), offset);
    let (beat, bpm) = match plain.split_once('=') {
        Some((lhs, rhs)) => {
            let mut beat = Frac::from_integer(0);
            for part in lhs.split_whitespace() {
                beat += parse_fraction(part, offset)?;
            }
            if beat == Frac::from_integer(0) {
                return Err(bad());
            }
            (beat, rhs.trim().parse::<u64>().map_err(|_| bad())?)
        }
        None => (unit, plain.trim().parse::<u64>().map_err(|_| bad())?),
    };
    if bpm == 0 {
        return Err(bad());
    }
    Ok((beat, bpm))
}

fn key_has_accidentals(key: &str) -> bool {
    let k: String = key
        .split('%')
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    !matches!(
        k.as_str(),
        "" | "c"
            | "cmaj"
            | "cmajor"
            | "cion"
            | "cionian"
            | "am"
            | "amin"
            | "aminor"
            | "aaeolian"
            | "aaeo"
            | "none"
    )
}

fn is_field_line(line: &str) -> bool {
    let b = line.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':'
}

/// Reads a length multiplier starting at `pos`. Returns the multiplier and
/// the position after it.
fn parse_length(b: &[u8], mut pos: usize, base: usize) -> Result<(Frac, usize), AbcError> {
    let start = pos;
    let read_int = |pos: &mut usize| -> Option<u64> {
        let s = *pos;
        while *pos < b.len() && b[*pos].is_ascii_digit() {
            *pos += 1;
        }
        std::str::from_utf8(&b[s..*pos]).ok()?.parse().ok()
    };
    let num = read_int(&mut pos);
    let mut mult = Frac::from_integer(num.unwrap_or(1));
    if num == Some(0) {
        return Err(syntax("zero length multiplier", base + start));
    }
    if pos < b.len() && b[pos] == b'/' {
        let mut slashes = 0u32;
        while pos < b.len() && b[pos] == b'/' {
            slashes += 1;
            pos += 1;
        }
        match read_int(&mut pos) {
            Some(0) => return Err(syntax("zero length divisor", base + start)),
            Some(d) if slashes == 1 => mult /= d,
            Some(_) => return Err(syntax("ambiguous length divisor", base + start)),
            None => mult /= 2u64.pow(slashes),
        }
    }
    Ok((mult, pos))
}

fn note_pitch(letter: u8) -> i32 {
    let base = match letter.to_ascii_uppercase() {
        b'C' => 0,
        b'D' => 2,
        b'E' => 4,
        b'F' => 5,
        b'G' => 7,
        b'A' => 9,
        b'B' => 11,
        _ => unreachable!("caller checks the letter"),
    };
    if letter.is_ascii_lowercase() {
        72 + base
    } else {
        60 + base
    }
}

fn parse_body_line(st: &mut State, line: &str, base: usize) -> Result<(), AbcError> {
    let b = line.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let off = base + i;
        let c = b[i];
        let next = b.get(i + 1).copied();
        match c {
            b' ' | b'\t' | b'\r' => i += 1,
            b'%' => break,
            b'\\' if b[i + 1..].iter().all(|c| c.is_ascii_whitespace()) => break,
            b'|' => match next {
                Some(b':') => return Err(unsupported("repeats", off)),
                Some(d) if d.is_ascii_digit() => return Err(unsupported("repeats", off)),
                Some(b'|') | Some(b']') => i += 2,
                _ => i += 1,
            },
            b':' => return Err(unsupported("repeats", off)),
            b'[' => match next {
                Some(b'|') => i += 2,
                Some(d) if d.is_ascii_digit() => return Err(unsupported("repeats", off)),
                Some(l) if l.is_ascii_alphabetic() && b.get(i + 2) == Some(&b':') => {
                    return Err(unsupported("inline fields", off))
                }
                _ => return Err(unsupported("chords", off)),
            },
            b'-' => return Err(unsupported("ties", off)),
            b'(' => match next {
                Some(d) if d.is_ascii_digit() => return Err(unsupported("tuplets", off)),
                _ => return Err(unsupported("slurs", off)),
            },
            b')' => return Err(unsupported("slurs", off)),
            b'{' => return Err(unsupported("grace notes", off)),
            b'>' | b'<' => return Err(unsupported("broken rhythm", off)),
            b'"' => return Err(unsupported("chord symbols and annotations", off)),
            b'!' | b'+' | b'~' | b'.' => return Err(unsupported("decorations", off)),
            b'z' => {
                let (mult, end) = parse_length(b, i + 1, base)?;
                let len = st.unit * mult;
                st.push(None, len, off)?;
                i = end;
            }
            b'Z' => {
                let bar = st
                    .bar
                    .ok_or_else(|| syntax("bar rest needs a meter", off))?;
                let (bars, end) = parse_length(b, i + 1, base)?;
                if !bars.is_integer() {
                    return Err(syntax("fractional bar rest", off));
                }
                st.push(None, bar * bars, off)?;
                i = end;
            }
            b'^' | b'_' | b'=' | b'A'..=b'G' | b'a'..=b'g' => {
                let mut j = i;
                let mut shift = 0i32;
                while j < b.len() && matches!(b[j], b'^' | b'_' | b'=') {
                    shift += match b[j] {
                        b'^' => 1,
                        b'_' => -1,
                        _ => 0,
                    };
                    j += 1;
                }
                if j - i > 2 {
                    return Err(syntax("too many accidentals", off));
                }
                let letter = match b.get(j) {
                    Some(l @ (b'A'..=b'G' | b'a'..=b'g')) => *l,
                    _ => return Err(syntax("accidental without a note", off)),
                };
                j += 1;
                let mut pitch = note_pitch(letter) + shift;
                while j < b.len() && matches!(b[j], b'\'' | b',') {
                    pitch += if b[j] == b'\'' { 12 } else { -12 };
                    j += 1;
                }
                let pitch = u8::try_from(pitch)
                    .ok()
                    .filter(|p| *p <= 127)
                    .ok_or_else(|| syntax(format!("pitch {pitch} outside MIDI range"), off))?;
                let (mult, end) = parse_length(b, j, base)?;
                let len = st.unit * mult;
                st.push(Some(pitch), len, off)?;
                i = end;
            }
            b'0'..=b'9' | b'/' => return Err(syntax("length without a note", off)),
            _ => return Err(unsupported("symbol", off)),
        }
    }
    Ok(())
}

pub fn parse_abc_tune(text: &str) -> Result<AbcTune, AbcError> {
    let mut tune = AbcTune {
        reference: None,
        title: None,
        meter: None,
        key: None,
        events: Vec::new(),
        key_signature_ignored: false,
    };
    let default_unit = Frac::new(1, 8);
    let mut st = State {
        unit: default_unit,
        tempo: (Frac::new(1, 4), 120),
        bar: Some(Frac::new(4, 4)),
        now: Frac::from_integer(0),
        events: Vec::new(),
    };
    let mut tempo_text: Option<(String, usize)> = None;
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let base = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if is_field_line(line) {
            let field = line.as_bytes()[0];
            let value = line[2..].trim();
            let started = !st.events.is_empty();
            match field {
                b'X' if started => return Err(unsupported("multiple tunes", base)),
                b'X' => tune.reference = Some(value.to_string()),
                b'T' => {
                    if tune.title.is_none() {
                        tune.title = Some(value.to_string());
                    }
                }
                b'M' => {
                    st.bar = parse_meter(value, base + 2)?;
                    tune.meter = Some(value.to_string());
                }
                b'L' => st.unit = parse_fraction(value, base + 2)?,
                b'Q' if started => return Err(unsupported("tempo changes", base)),
                b'Q' => tempo_text = Some((value.to_string(), base + 2)),
                b'K' => {
                    if key_has_accidentals(value) {
                        tune.key_signature_ignored = true;
                    }
                    tune.key = Some(value.to_string());
                }
                b'V' => return Err(unsupported("voices", base)),
                _ => {}
            }
            continue;
        }
        if st.events.is_empty() {
            // tempo is resolved against the unit length in force when the body starts
            if let Some((q, at)) = &tempo_text {
                st.tempo = parse_tempo(q, st.unit, *at)?;
            }
        }
        parse_body_line(&mut st, line, base)?;
    }
    tune.events = st.events;
    Ok(tune)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::NoteKind;

    #[test]
    fn single_quarter() {
        let ev = parse_abc_subset("L:1/4\nQ:1/4=120\nK:C\nC").unwrap();
        assert_eq!(ev, vec![NoteEvent::pitched(60, 0, 500)]);
    }

    #[test]
    fn multipliers_and_rests() {
        let ev = parse_abc_subset("X:1\nL:1/4\nQ:1/4=120\nK:C\nC2 z C/\n").unwrap();
        assert_eq!(
            ev,
            vec![
                NoteEvent::pitched(60, 0, 1000),
                NoteEvent::rest(1000, 500),
                NoteEvent::pitched(60, 1500, 250)
            ]
        );
    }

    #[test]
    fn defaults_are_eighth_at_quarter_120() {
        let ev = parse_abc_subset("K:C\nC D").unwrap();
        assert_eq!(
            ev,
            vec![
                NoteEvent::pitched(60, 0, 250),
                NoteEvent::pitched(62, 250, 250)
            ]
        );
    }

    #[test]
    fn pitch_mapping() {
        let ev = parse_abc_subset("K:C\nC c c' C, ^C _B =F ^^c __e B,,").unwrap();
        let pitches: Vec<u8> = ev
            .iter()
            .map(|e| match e.kind {
                NoteKind::Pitched(p) => p,
                NoteKind::Rest => panic!("rest"),
            })
            .collect();
        assert_eq!(pitches, vec![60, 72, 84, 48, 61, 70, 65, 74, 74, 47]);
    }

    #[test]
    fn length_forms() {
        let ev = parse_abc_subset("L:1/8\nK:C\nC3/2 C// C/4 C2/").unwrap();
        let durs: Vec<u32> = ev.iter().map(|e| e.dur_ms).collect();
        // eighth = 250 ms
        assert_eq!(durs, vec![375, 63, 62, 250]);
        // onsets accumulate exact time before rounding
        assert_eq!(ev[1].onset_ms, 375);
        assert_eq!(ev[2].onset_ms, 438);
    }

    #[test]
    fn bar_rest_uses_meter() {
        let ev = parse_abc_subset("M:3/4\nL:1/4\nK:C\nC | Z2 | C").unwrap();
        assert_eq!(ev[1], NoteEvent::rest(500, 3000));
        assert_eq!(ev[2].onset_ms, 3500);
    }

    #[test]
    fn tempo_forms() {
        let ev = parse_abc_subset("L:1/8\nQ:\"Allegro\" 3/8=60\nK:C\nC").unwrap();
        // dotted quarter = 1000 ms, eighth = 333.33
        assert_eq!(ev[0].dur_ms, 333);
        let ev = parse_abc_subset("L:1/4\nQ:60\nK:C\nC").unwrap();
        assert_eq!(ev[0].dur_ms, 1000);
    }

    #[test]
    fn unsupported_constructs() {
        let cases = [
            ("K:C\n[CEG]", "chords", 4),
            ("K:C\nC-C", "ties", 5),
            ("K:C\n(3CDE", "tuplets", 4),
            ("K:C\n|:CD:|", "repeats", 4),
            ("K:C\nCD|1 E", "repeats", 6),
            ("K:C\n{g}C", "grace notes", 4),
            ("K:C\nC>D", "broken rhythm", 5),
        ];
        for (text, construct, offset) in cases {
            match parse_abc_subset(text) {
                Err(AbcError::Unsupported {
                    construct: c,
                    offset: o,
                }) => {
                    assert_eq!((c, o), (construct, offset), "{text:?}");
                }
                other => panic!("{text:?}: {other:?}"),
            }
        }
        let msg = parse_abc_subset("K:C\n[CEG]").unwrap_err().to_string();
        assert!(msg.contains("chords unsupported"), "{msg}");
    }

    #[test]
    fn key_signature_flagged_not_applied() {
        let t = parse_abc_tune("X:3\nT:Tune\nK:D\nF").unwrap();
        assert!(t.key_signature_ignored);
        assert_eq!(t.reference.as_deref(), Some("3"));
        assert_eq!(t.events[0].kind, NoteKind::Pitched(65));
        assert!(!parse_abc_tune("K:Am\nA").unwrap().key_signature_ignored);
    }

    #[test]
    fn comments_and_bars_skipped() {
        let ev = parse_abc_subset("K:C % key\nC D | E F || G |] % end\n").unwrap();
        assert_eq!(ev.len(), 5);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let e = parse_abc_subset("K:C\nC 2").unwrap_err();
        assert_eq!(e.offset(), 6);
        let e = parse_abc_subset("K:C\nc''''''").unwrap_err();
        assert_eq!(e.offset(), 4);
    }
}
