//! Synthetic folk-like melodies for desk-scale experiments.

use super::{Corpus, Piece};
use crate::tokenizer::NoteEvent;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];
const TONICS: [i32; 5] = [60, 62, 65, 67, 57];

/// Generator settings. Defaults produce 200 melodies.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusParams {
    pub pieces: usize,
    pub seed: u64,
    pub min_notes: usize,
    pub max_notes: usize,
}

impl Default for ToyCorpusParams {
    fn default() -> Self {
        ToyCorpusParams {
            pieces: 200,
            seed: 2022,
            min_notes: 16,
            max_notes: 48,
        }
    }
}

/// Random walks over a major or minor scale with durations drawn from a
/// small set and occasional rests. Each melody ends on its tonic.
pub fn generate_toy_corpus(params: &ToyCorpusParams) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let steps = [-3i32, -2, -1, 0, 1, 2, 3];
    let step_w = WeightedIndex::new([1u32, 4, 10, 3, 10, 4, 1]).expect("weights");
    let durs = [250u32, 500, 750, 1000, 1500];
    let dur_w = WeightedIndex::new([6u32, 8, 2, 3, 1]).expect("weights");
    let lo = params.min_notes.max(1);
    let hi = params.max_notes.max(lo);
    let mut pieces = Vec::with_capacity(params.pieces);
    for n in 0..params.pieces {
        let tonic = TONICS[rng.random_range(0..TONICS.len())];
        let scale = if rng.random_bool(0.7) { MAJOR } else { MINOR };
        let len = rng.random_range(lo..=hi);
        // degree index relative to the tonic, kept within about two octaves
        let mut degree: i32 = 0;
        let mut t = 0u64;
        let mut events = Vec::with_capacity(len + 2);
        for i in 0..len {
            let last = i + 1 == len;
            if !last && i > 0 && rng.random_bool(0.05) {
                let d = if rng.random_bool(0.5) { 250 } else { 500 };
                events.push(NoteEvent::rest(t, d));
                t += u64::from(d);
            }
            if last {
                degree = 7 * degree.div_euclid(7);
            } else if i > 0 {
                degree = (degree + steps[step_w.sample(&mut rng)]).clamp(-5, 10);
            }
            let octave = degree.div_euclid(7);
            let pitch = tonic + 12 * octave + scale[degree.rem_euclid(7) as usize];
            let d = if last {
                1000
            } else {
                durs[dur_w.sample(&mut rng)]
            };
            events.push(NoteEvent::pitched(pitch as u8, t, d));
            t += u64::from(d);
        }
        pieces.push(Piece {
            id: format!("toy-{n:04}"),
            events,
        });
    }
    Corpus::new(pieces).expect("generated pieces are valid")
}
