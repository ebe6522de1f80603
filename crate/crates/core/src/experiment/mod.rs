//! The end-to-end typicality experiment: ingest, tokenize, split, train,
//! sample under each condition, score everything with the unpruned model and
//! emit histograms, summaries, trends and a run manifest.

pub mod config;
pub mod histogram;
pub mod trends;

pub use config::{ConfigError, ExpectedIdSource, ExperimentConfig};
pub use histogram::{shared_edges, wasserstein1, Histogram, Summary};
pub use trends::{compare_conditions, Comparison, Outcome, Trend, TrendError, TrendSummary};

use crate::corpus::{
    self, generate_toy_corpus, sha256_hex, Corpus, CorpusError, Split, SplitAssignment,
    TokenRecord, ToyCorpusParams,
};
use crate::metrics::{self, Estimate, IdSource, MetricsError, SequenceAnalysis, Units};
use crate::model::{ModelError, NGramModel};
use crate::sampler::{self, SampledSequence, SamplerConfig, SamplerError, Strategy};
use crate::tokenizer::Token;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConditionKind {
    Reference,
    Conventional,
    Typical { tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub piece_id: String,
    pub position: usize,
    pub token_id: u16,
    pub ic: f64,
    pub entropy: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceRecord {
    pub piece_id: String,
    pub length: usize,
    pub total_ic: f64,
    pub id: f64,
    pub epsilon_id: f64,
    pub truncated: bool,
}

/// Everything measured for one series (Reference, Conventional or
/// Typical@tau). Values are in the configured units.
#[derive(Debug, Clone)]
pub struct Condition {
    pub label: String,
    pub kind: ConditionKind,
    pub events: Vec<EventRecord>,
    pub sequences: Vec<SequenceRecord>,
    pub truncated: usize,
    /// Signed per-event epsilon.
    pub event_summary: Summary,
    /// Per-sequence epsilon_id.
    pub epsilon_id_summary: Summary,
    /// Per-sequence information density.
    pub id_summary: Summary,
    pub id_estimate: Estimate,
    pub event_histogram: Histogram,
    pub sequence_histogram: Histogram,
    /// Generated sequences; `None` for the reference.
    pub samples: Option<Vec<SampledSequence>>,
}

impl Condition {
    /// Tau of a typical condition; conventional sampling counts as 1.
    pub fn tau(&self) -> f64 {
        match self.kind {
            ConditionKind::Typical { tau } => tau,
            _ => 1.0,
        }
    }

    /// File-name friendly label.
    pub fn file_stem(&self) -> String {
        self.label.replace('@', "-")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub model_hash: String,
    pub split_seed: u64,
    pub sample_seed: u64,
    pub taus: Vec<f64>,
    pub units: Units,
    pub pieces: BTreeMap<String, usize>,
    pub sample_count: usize,
    pub sample_max_len: usize,
    pub expected_id_source: String,
    pub expected_id: Estimate,
    /// Canonical configuration; `ExperimentConfig::parse` reproduces the run.
    pub config: String,
    /// Emitted files (relative to the output directory) and their SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub manifest: RunManifest,
    /// Reference first, then Conventional, then Typical in config order.
    pub conditions: Vec<Condition>,
    pub model: NGramModel,
    pub split: SplitAssignment,
    pub corpus: Corpus,
}

impl ReportBundle {
    pub fn reference(&self) -> &Condition {
        &self.conditions[0]
    }

    pub fn condition(&self, label: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

/// Loads and merges every corpus source named by the config.
pub fn load_corpus(config: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    let mut corpus = Corpus::default();
    for path in &config.corpus {
        corpus.extend(corpus::load_jsonl(path)?)?;
    }
    for path in &config.abc {
        corpus.push(corpus::load_abc_file(path)?)?;
    }
    if let Some(pieces) = config.toy_pieces {
        corpus.extend(generate_toy_corpus(&ToyCorpusParams {
            pieces,
            seed: config.toy_seed,
            ..ToyCorpusParams::default()
        }))?;
    }
    if let Some(max) = config.max_tokens {
        corpus = corpus.filter_max_tokens(max)?;
    }
    if corpus.is_empty() {
        return Err(ExperimentError::Data("corpus is empty".into()));
    }
    Ok(corpus)
}

fn analyze_all(
    model: &NGramModel,
    seqs: &[&[Token]],
) -> Result<Vec<SequenceAnalysis>, MetricsError> {
    seqs.par_iter()
        .map(|s| metrics::analyze_sequence(model, s))
        .collect()
}

/// The drawn part of a sample. The eos appended to a truncated sample was
/// never drawn, so it is left out of event and sequence scoring.
fn scored_tokens(s: &SampledSequence) -> &[Token] {
    if s.truncated && s.tokens.len() > 1 {
        &s.tokens[..s.tokens.len() - 1]
    } else {
        &s.tokens
    }
}

struct RawCondition {
    label: String,
    kind: ConditionKind,
    ids: Vec<String>,
    analyses: Vec<SequenceAnalysis>,
    tokens: Vec<Vec<Token>>,
    truncated: Vec<bool>,
    samples: Option<Vec<SampledSequence>>,
}

fn build_records(
    raw: &RawCondition,
    scale: f64,
    expected_id: f64,
) -> (Vec<EventRecord>, Vec<SequenceRecord>) {
    let mut events = Vec::new();
    let mut seqs = Vec::with_capacity(raw.analyses.len());
    for (i, a) in raw.analyses.iter().enumerate() {
        for (pos, ev) in a.events.iter().enumerate() {
            events.push(EventRecord {
                piece_id: raw.ids[i].clone(),
                position: pos,
                token_id: raw.tokens[i][pos].id(),
                ic: ev.ic * scale,
                entropy: ev.entropy * scale,
                epsilon: ev.epsilon * scale,
            });
        }
        let id = a.summary.id * scale;
        seqs.push(SequenceRecord {
            piece_id: raw.ids[i].clone(),
            length: a.summary.length,
            total_ic: a.summary.total_ic * scale,
            id,
            epsilon_id: expected_id - id,
            truncated: raw.truncated[i],
        });
    }
    (events, seqs)
}

/// Runs the whole pipeline in memory. Nothing is written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle, ExperimentError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &ExperimentConfig) -> Result<ReportBundle, ExperimentError> {
    let corpus = load_corpus(config)?;
    let tokenized = corpus.tokenize()?;
    let split = corpus::split(&corpus, config.split_seed);
    let by_split = |s: Split| -> Vec<(&str, &[Token])> {
        tokenized
            .iter()
            .filter(|(id, _)| split.get(id) == Some(s))
            .map(|(id, seq)| (id.as_str(), seq.tokens()))
            .collect()
    };
    let train = by_split(Split::Train);
    let test = by_split(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(ExperimentError::Data(format!(
            "split seed {} leaves {} training and {} test pieces; both must be nonempty",
            config.split_seed,
            train.len(),
            test.len()
        )));
    }
    let train_seqs: Vec<&[Token]> = train.iter().map(|(_, s)| *s).collect();
    let model = NGramModel::train(&train_seqs, config.order, config.alpha)?;
    let model_hash = sha256_hex(&model.to_json_bytes());
    log::info!(
        "trained order-{} model on {} pieces, {} held out for reference",
        config.order,
        train.len(),
        test.len()
    );

    let test_seqs: Vec<&[Token]> = test.iter().map(|(_, s)| *s).collect();
    let reference = RawCondition {
        label: "reference".into(),
        kind: ConditionKind::Reference,
        ids: test.iter().map(|(id, _)| id.to_string()).collect(),
        analyses: analyze_all(&model, &test_seqs)?,
        tokens: test_seqs.iter().map(|s| s.to_vec()).collect(),
        truncated: vec![false; test.len()],
        samples: None,
    };

    let sample_count = config.sample_count.unwrap_or(test.len());
    let max_len = config
        .sample_max_len
        .unwrap_or_else(|| test_seqs.iter().map(|s| s.len()).max().unwrap_or(1));

    let scale = config.units.scale();
    let expected_id_nats = match config.expected_id_source {
        ExpectedIdSource::Reference => {
            let ids: Vec<f64> = reference.analyses.iter().map(|a| a.summary.id).collect();
            Estimate::from_values(&ids).expect("test set nonempty")
        }
        ExpectedIdSource::MonteCarlo => metrics::expected_id(
            &model,
            IdSource::MonteCarlo {
                samples: config.mc_samples,
                seed: config.seed.wrapping_add(1),
                max_len,
            },
        )?,
    };
    let expected_id = Estimate {
        mean: expected_id_nats.mean * scale,
        std_err: expected_id_nats.std_err * scale,
        n: expected_id_nats.n,
    };

    let strategies: Vec<Strategy> = std::iter::once(Strategy::Conventional)
        .chain(config.taus.iter().map(|&tau| Strategy::Typical { tau }))
        .collect();
    let mut raws = vec![reference];
    for strategy in strategies {
        let sc = SamplerConfig::new(strategy, max_len, config.seed)?;
        let samples = sampler::sample_batch(&model, &sc, sample_count)?;
        log::info!("sampled {sample_count} sequences ({})", strategy.label());
        let seqs: Vec<&[Token]> = samples.iter().map(scored_tokens).collect();
        let analyses = analyze_all(&model, &seqs)?;
        let label = strategy.label();
        raws.push(RawCondition {
            ids: (0..samples.len())
                .map(|i| format!("{label}-{i:05}"))
                .collect(),
            label,
            kind: match strategy {
                Strategy::Conventional => ConditionKind::Conventional,
                Strategy::Typical { tau } => ConditionKind::Typical { tau },
            },
            analyses,
            tokens: seqs.iter().map(|s| s.to_vec()).collect(),
            truncated: samples.iter().map(|s| s.truncated).collect(),
            samples: Some(samples),
        });
    }

    let records: Vec<(Vec<EventRecord>, Vec<SequenceRecord>)> = raws
        .iter()
        .map(|r| build_records(r, scale, expected_id.mean))
        .collect();
    let eps = |events: &[EventRecord]| events.iter().map(|e| e.epsilon).collect::<Vec<_>>();
    let eps_id = |seqs: &[SequenceRecord]| seqs.iter().map(|s| s.epsilon_id).collect::<Vec<_>>();
    let all_eps: Vec<f64> = records.iter().flat_map(|(e, _)| eps(e)).collect();
    let all_eps_id: Vec<f64> = records.iter().flat_map(|(_, s)| eps_id(s)).collect();
    let event_edges = shared_edges(&eps(&records[0].0), &all_eps);
    let seq_edges = shared_edges(&eps_id(&records[0].1), &all_eps_id);

    let mut conditions = Vec::with_capacity(raws.len());
    for (raw, (events, sequences)) in raws.into_iter().zip(records) {
        let e = eps(&events);
        let s = eps_id(&sequences);
        let ids: Vec<f64> = sequences.iter().map(|r| r.id).collect();
        conditions.push(Condition {
            event_summary: Summary::of(&e),
            epsilon_id_summary: Summary::of(&s),
            id_summary: Summary::of(&ids),
            id_estimate: Estimate::from_values(&ids).expect("nonempty condition"),
            event_histogram: Histogram::from_values(&raw.label, &event_edges, &e),
            sequence_histogram: Histogram::from_values(&raw.label, &seq_edges, &s),
            truncated: sequences.iter().filter(|r| r.truncated).count(),
            label: raw.label,
            kind: raw.kind,
            events,
            sequences,
            samples: raw.samples,
        });
    }

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.config_hash(),
        corpus_hash: corpus.content_hash(),
        model_hash,
        split_seed: config.split_seed,
        sample_seed: config.seed,
        taus: config.taus.clone(),
        units: config.units,
        pieces: [Split::Train, Split::Validation, Split::Test]
            .iter()
            .map(|s| (s.as_str().to_string(), split.count(*s)))
            .collect(),
        sample_count,
        sample_max_len: max_len,
        expected_id_source: config.expected_id_source.as_str().to_string(),
        expected_id,
        config: config.canonical_text(),
        artifacts: BTreeMap::new(),
        notes: vec![
            "the reference test split stands in for the true data distribution".into(),
            "epsilon_id of every condition is measured against the reference expected ID".into(),
            "per-event entropy and IC are always scored with the unpruned model".into(),
        ],
    };
    Ok(ReportBundle {
        manifest,
        conditions,
        model,
        split,
        corpus,
    })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>, ExperimentError>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let run = |w: &mut csv::Writer<Vec<u8>>| -> Result<(), csv::Error> {
        w.write_record(header)?;
        fill(w)
    };
    run(&mut w).map_err(|e| ExperimentError::Corpus(CorpusError::Csv(e)))?;
    w.into_inner()
        .map_err(|e| ExperimentError::Data(format!("csv buffer: {e}")))
}

fn histogram_csv(hists: &[&Histogram]) -> Result<Vec<u8>, ExperimentError> {
    csv_bytes(
        &["bin_left", "bin_right", "count", "density", "series"],
        |w| {
            for h in hists {
                for ((edge, count), density) in
                    h.bin_edges.windows(2).zip(&h.counts).zip(h.densities())
                {
                    w.write_record([
                        edge[0].to_string(),
                        edge[1].to_string(),
                        count.to_string(),
                        density.to_string(),
                        h.series_label.clone(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

/// Serialized artifacts of a bundle, keyed by path relative to the output
/// directory. The manifest is not included.
pub fn render_artifacts(
    bundle: &ReportBundle,
) -> Result<BTreeMap<String, Vec<u8>>, ExperimentError> {
    let mut files = BTreeMap::new();
    let mut split_csv = Vec::new();
    bundle.split.write_csv(&mut split_csv)?;
    files.insert("split.csv".to_string(), split_csv);
    files.insert("model.json".to_string(), bundle.model.to_json_bytes());

    for c in &bundle.conditions {
        let stem = c.file_stem();
        let events = csv_bytes(
            &[
                "piece_id", "position", "token_id", "ic", "entropy", "epsilon",
            ],
            |w| {
                for e in &c.events {
                    w.write_record([
                        e.piece_id.clone(),
                        e.position.to_string(),
                        e.token_id.to_string(),
                        e.ic.to_string(),
                        e.entropy.to_string(),
                        e.epsilon.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?;
        files.insert(format!("metrics/events_{stem}.csv"), events);
        let seqs = csv_bytes(
            &["piece_id", "length", "total_ic", "id", "epsilon_id"],
            |w| {
                for s in &c.sequences {
                    w.write_record([
                        s.piece_id.clone(),
                        s.length.to_string(),
                        s.total_ic.to_string(),
                        s.id.to_string(),
                        s.epsilon_id.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?;
        files.insert(format!("metrics/sequences_{stem}.csv"), seqs);

        if let Some(samples) = &c.samples {
            let meta = serde_json::json!({
                "strategy": c.label,
                "tau": match c.kind { ConditionKind::Typical { tau } => Some(tau), _ => None },
                "seed": bundle.manifest.sample_seed,
                "max_len": bundle.manifest.sample_max_len,
                "model_hash": bundle.manifest.model_hash,
                "config_hash": bundle.manifest.config_hash,
                "truncated": c.truncated,
            });
            let records: Vec<TokenRecord> = samples
                .iter()
                .zip(&c.sequences)
                .map(|(s, r)| TokenRecord {
                    id: r.piece_id.clone(),
                    tokens: s.tokens.clone(),
                    truncated: s.truncated,
                })
                .collect();
            let mut buf = Vec::new();
            corpus::write_token_jsonl(&mut buf, Some(&meta), &records)
                .map_err(|e| ExperimentError::Data(e.to_string()))?;
            files.insert(format!("samples/{stem}.jsonl"), buf);
        }
    }

    let event_hists: Vec<&Histogram> = bundle
        .conditions
        .iter()
        .map(|c| &c.event_histogram)
        .collect();
    let seq_hists: Vec<&Histogram> = bundle
        .conditions
        .iter()
        .map(|c| &c.sequence_histogram)
        .collect();
    files.insert(
        "hist_event_epsilon.csv".into(),
        histogram_csv(&event_hists)?,
    );
    files.insert(
        "hist_sequence_epsilon_id.csv".into(),
        histogram_csv(&seq_hists)?,
    );

    let summary = csv_bytes(
        &[
            "family",
            "series",
            "n",
            "mean",
            "median",
            "stdev",
            "iqr",
            "truncated",
        ],
        |w| {
            for c in &bundle.conditions {
                for (family, s) in [
                    ("event_epsilon", &c.event_summary),
                    ("sequence_epsilon_id", &c.epsilon_id_summary),
                    ("sequence_id", &c.id_summary),
                ] {
                    w.write_record([
                        family.to_string(),
                        c.label.clone(),
                        s.n.to_string(),
                        s.mean.to_string(),
                        s.median.to_string(),
                        s.stdev.to_string(),
                        s.iqr.to_string(),
                        c.truncated.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    files.insert("summary.csv".into(), summary);

    if let Ok(trends) = compare_conditions(bundle) {
        let mut json = serde_json::to_vec_pretty(&trends).expect("trends serialize");
        json.push(b'\n');
        files.insert("trends.json".into(), json);
    }
    Ok(files)
}

fn probe_writable(out: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let probe = out.join(".melotyp-write-probe");
    std::fs::write(&probe, b"").map_err(io_err(&probe))?;
    std::fs::remove_file(&probe).map_err(io_err(&probe))
}

/// Writes the rendered artifacts and `manifest.json` into `out`, returning
/// the manifest with artifact hashes filled in.
pub fn write_bundle(bundle: &ReportBundle, out: &Path) -> Result<RunManifest, ExperimentError> {
    let files = render_artifacts(bundle)?;
    probe_writable(out)?;
    let mut manifest = bundle.manifest.clone();
    for (name, bytes) in &files {
        let path = out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        manifest.artifacts.insert(name.clone(), sha256_hex(bytes));
    }
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    let path = out.join("manifest.json");
    std::fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Checks that `out` is writable, runs the experiment and writes the bundle.
pub fn run_and_write(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(ReportBundle, RunManifest), ExperimentError> {
    config.validate()?;
    probe_writable(out)?;
    let bundle = run_experiment(config)?;
    let manifest = write_bundle(&bundle, out)?;
    Ok((bundle, manifest))
}

/// Reads the canonical configuration stored in a manifest.
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))?;
    let text = value
        .get("config")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ExperimentError::Data(format!("{}: no config field", path.display())))?;
    Ok(ExperimentConfig::parse(text, Path::new("."))?)
}
