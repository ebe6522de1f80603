//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use melody_typicality::corpus::{generate_toy_corpus, ToyCorpusParams};
use melody_typicality::experiment::{
    compare_conditions, config_from_manifest, run_and_write, run_experiment, wasserstein1,
    ExperimentConfig,
};
use melody_typicality::metrics::{
    enumerate_exact, event_entropy, event_ic, event_typicality, expected_id, Enumeration, Estimate,
    IdSource,
};
use melody_typicality::model::{CategoricalDistribution, ConditionalModel, NGramModel};
use melody_typicality::sampler::{sample_batch, typical_prune, SamplerConfig, Strategy};
use melody_typicality::tokenizer::{decode, encode, encode_duration, NoteEvent, NoteKind, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn default_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.conf");
    ExperimentConfig::from_file(&path).expect("bundled toy config parses")
}

/// Vocabulary of three (two symbols and eos), order 2.
fn tiny_model() -> NGramModel {
    let t = Token::from_id;
    let seqs = vec![
        vec![t(0), t(1), t(2)],
        vec![t(0), t(0), t(1), t(2)],
        vec![t(1), t(0), t(2)],
        vec![t(0), t(1), t(1), t(2)],
        vec![t(1), t(2)],
    ];
    NGramModel::train_with_vocab(&seqs, 2, 1.0, 3).expect("tiny model trains")
}

fn ac1_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let model = tiny_model();
    let exact = enumerate_exact(&model, Enumeration::UntilEos { max_len: 4 }).unwrap();
    let mc = expected_id(
        &model,
        IdSource::MonteCarlo {
            samples: 100_000,
            seed: 11,
            max_len: 4,
        },
    )
    .unwrap();
    let rel = (mc.mean - exact.expected_id).abs() / exact.expected_id;

    let pruned = typical_prune(&model.next_distribution(&[]).unwrap(), 0.5).unwrap();
    let config = SamplerConfig::new(Strategy::Typical { tau: 0.5 }, 4, 12).unwrap();
    let draws = sample_batch(&model, &config, 1_000_000).unwrap();
    let mut counts = [0u64; 3];
    for s in &draws {
        counts[s.tokens[0].index()] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(pruned.probs())
            .map(|(&c, &p)| (c as f64 / draws.len() as f64 - p).abs())
            .sum::<f64>();
    let elapsed = start.elapsed();
    verdict(
        rel <= 0.01 && tv <= 0.005 && elapsed < Duration::from_secs(30),
        format!(
            "E[ID] exact {:.6} vs MC {:.6} (rel {:.2e}); first-token TV {:.2e} over support {}; {:.1?}",
            exact.expected_id,
            mc.mean,
            rel,
            tv,
            pruned.support_size(),
            elapsed
        ),
    )
}

fn ac2_to_ac4() -> [Verdict; 3] {
    let start = Instant::now();
    let bundle = run_experiment(&default_config()).unwrap();
    let elapsed = start.elapsed();
    let trends = compare_conditions(&bundle).unwrap();
    let stdevs: Vec<String> = bundle
        .conditions
        .iter()
        .skip(1)
        .map(|c| format!("{} {:.3}", c.label, c.event_summary.stdev))
        .collect();
    let ac2 = verdict(
        trends.epsilon_stdev_decreasing.holds
            && trends.epsilon_stdev_below_conventional.holds
            && elapsed < Duration::from_secs(60),
        format!("eps stdev: {}; run {:.1?}", stdevs.join(", "), elapsed),
    );
    let ids: Vec<String> = trends
        .mean_id_decreasing
        .comparisons
        .iter()
        .map(|c| {
            format!(
                "{}->{} {:+.3} (2se {:.3})",
                c.from,
                c.to,
                c.margin,
                2.0 * c.std_err.unwrap_or(f64::NAN)
            )
        })
        .collect();
    let ac3 = verdict(
        trends.mean_id_decreasing.holds && trends.mean_id_margins_exceed_2se,
        format!("mean ID steps: {}", ids.join(", ")),
    );
    let reference = bundle.reference();
    let w1 = |label: &str| {
        wasserstein1(
            &bundle.condition(label).unwrap().event_histogram,
            &reference.event_histogram,
        )
    };
    let (conv, low) = (w1("conventional"), w1("typical@0.2"));
    let ac4 = verdict(
        conv < low,
        format!("W1 to reference: conventional {conv:.4}, typical@0.2 {low:.4}"),
    );
    [ac2, ac3, ac4]
}

fn ac5_zero_mean_epsilon() -> Verdict {
    let bundle = run_experiment(&default_config()).unwrap();
    let model = &bundle.model;
    let config = SamplerConfig::new(Strategy::Conventional, 512, 5).unwrap();
    let mut eps = Vec::with_capacity(100_000);
    let mut batch = 0u64;
    while eps.len() < 100_000 {
        let cfg = SamplerConfig {
            seed: config.seed + batch,
            ..config
        };
        for s in sample_batch(model, &cfg, 500).unwrap() {
            // a forced eos was not drawn from the model
            let drawn = if s.truncated {
                &s.tokens[..s.tokens.len() - 1]
            } else {
                &s.tokens[..]
            };
            for t in 0..drawn.len() {
                let dist = model.next_distribution(&drawn[..t]).unwrap();
                eps.push(event_typicality(&dist, drawn[t]).unwrap().epsilon);
            }
        }
        batch += 1;
    }
    eps.truncate(100_000);
    let est = Estimate::from_values(&eps).unwrap();
    verdict(
        est.mean.abs() <= 3.0 * est.std_err,
        format!(
            "mean eps {:+.5}, 3se {:.5}, n {}",
            est.mean,
            3.0 * est.std_err,
            est.n
        ),
    )
}

fn round_trip_ok(events: &[NoteEvent]) -> bool {
    let Ok(seq) = encode(events) else {
        return false;
    };
    let Ok(decoded) = decode(seq.tokens()) else {
        return false;
    };
    let mut expected = Vec::new();
    let mut prev_end = None;
    for ev in events {
        if let Some(end) = prev_end {
            let gap = ev.onset_ms - end;
            if gap >= 10 {
                expected.push((NoteKind::Rest, gap as u32));
            }
        }
        expected.push((ev.kind, ev.dur_ms));
        prev_end = Some(ev.end_ms());
    }
    decoded.len() == expected.len()
        && decoded.iter().zip(&expected).all(|(d, (kind, dur))| {
            let tokens = encode_duration(*dur).unwrap().len() as i64;
            let err = (i64::from(d.dur_ms) - i64::from(*dur)).abs();
            d.kind == *kind && (err <= 5 * tokens || (*dur < 10 && d.dur_ms == 10))
        })
}

fn ac6_round_trip() -> Verdict {
    let corpus = generate_toy_corpus(&ToyCorpusParams::default());
    let toy_fail = corpus
        .pieces()
        .iter()
        .filter(|p| !round_trip_ok(&p.events))
        .count();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut random_fail = 0;
    let mut floor_cases = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..30);
        let mut onset = rng.random_range(0..2000u64);
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            onset += if rng.random_bool(0.5) {
                0
            } else {
                rng.random_range(0..1500)
            };
            let dur = match rng.random_range(0..4) {
                0 => rng.random_range(1..10),
                1 => rng.random_range(10..200),
                2 => rng.random_range(200..1500),
                _ => rng.random_range(1500..6000),
            };
            floor_cases += usize::from(dur < 10);
            let kind = if rng.random_bool(0.15) {
                NoteKind::Rest
            } else {
                NoteKind::Pitched(rng.random_range(0..128))
            };
            events.push(NoteEvent {
                kind,
                onset_ms: onset,
                dur_ms: dur,
            });
            onset += u64::from(dur);
        }
        random_fail += usize::from(!round_trip_ok(&events));
    }
    verdict(
        toy_fail == 0 && random_fail == 0 && floor_cases > 0,
        format!(
            "{} toy pieces, 1000 random lists ({floor_cases} sub-10 ms durations); failures {toy_fail} + {random_fail}",
            corpus.len()
        ),
    )
}

fn ac7_exact_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identity = true;
    for _ in 0..100 {
        let w: Vec<f64> = (0..230).map(|_| rng.random_range(0.001..1.0)).collect();
        let total: f64 = w.iter().sum();
        let dist = CategoricalDistribution::new(w.iter().map(|x| x / total).collect()).unwrap();
        identity &= typical_prune(&dist, 1.0).unwrap() == dist;
    }
    let one_hot = CategoricalDistribution::one_hot(230, 60).unwrap();
    let mode = Token::from_id(60);
    let h0 = event_entropy(&one_hot);
    let ic0 = event_ic(&one_hot, mode).unwrap();
    let e0 = event_typicality(&one_hot, mode).unwrap().epsilon;
    let uniform = CategoricalDistribution::uniform(230).unwrap();
    let hu = event_entropy(&uniform);
    let pass =
        identity && h0 == 0.0 && ic0 == 0.0 && e0 == 0.0 && (hu - 230f64.ln()).abs() <= 1e-12;
    verdict(
        pass,
        format!(
            "prune(tau=1) identity {identity}; one-hot H {h0} IC {ic0} eps {e0}; uniform H - ln 230 = {:.1e}",
            hu - 230f64.ln()
        ),
    )
}

fn ac8_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut config = default_config();
    config.workers = 1;
    let (_, m1) = run_and_write(&config, &a).unwrap();
    let mut rerun = config_from_manifest(&a.join("manifest.json")).unwrap();
    rerun.workers = 4;
    let (_, m2) = run_and_write(&rerun, &b).unwrap();
    let csvs: Vec<&String> = m1
        .artifacts
        .keys()
        .filter(|k| k.ends_with(".csv"))
        .collect();
    let differing: Vec<&String> = csvs
        .iter()
        .copied()
        .filter(|k| std::fs::read(a.join(k)).unwrap() != std::fs::read(b.join(k)).unwrap())
        .collect();
    verdict(
        differing.is_empty() && m1.artifacts == m2.artifacts && !csvs.is_empty(),
        format!(
            "{} CSVs compared across workers 1 and 4; {} differ",
            csvs.len(),
            differing.len()
        ),
    )
}

fn main() {
    let [ac2, ac3, ac4] = ac2_to_ac4();
    let results = [
        ("AC-1 oracle equivalence", ac1_oracle_equivalence()),
        ("AC-2 typicality concentration", ac2),
        ("AC-3 probability shift", ac3),
        ("AC-4 conventional closest to reference", ac4),
        ("AC-5 zero-mean signed epsilon", ac5_zero_mean_epsilon()),
        ("AC-6 tokenizer round trip", ac6_round_trip()),
        ("AC-7 exact identities", ac7_exact_identities()),
        ("AC-8 determinism", ac8_determinism()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!(
            "{} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
