//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! toy_pieces = 200
//! order = 5
//! taus = 0.9, 0.5, 0.2
//! ```
//!
//! | key                | default             | meaning                                         |
//! |--------------------|---------------------|-------------------------------------------------|
//! | corpus             | (none)              | comma-separated JSONL corpus files              |
//! | abc                | (none)              | comma-separated ABC files, one tune each        |
//! | toy_pieces         | (none)              | add a generated toy corpus of this many pieces  |
//! | toy_seed           | 2022                | seed of the toy corpus generator                |
//! | max_tokens         | (none)              | drop pieces encoding to more tokens than this   |
//! | split_seed         | 0                   | seed of the hash split                          |
//! | order              | 5                   | n-gram order                                    |
//! | alpha              | 1.0                 | interpolation strength                          |
//! | taus               | 0.9, 0.5, 0.2       | typical sampling thresholds                     |
//! | sample_count       | test-set size       | sequences per sampled condition                 |
//! | sample_max_len     | longest test piece  | length cap (eos included)                       |
//! | seed               | 0                   | sampling seed                                   |
//! | units              | nats                | `nats` or `bits`                                |
//! | expected_id_source | reference           | `reference` or `monte_carlo`                    |
//! | mc_samples         | 1000                | sample count for `monte_carlo`                  |
//! | workers            | 0                   | worker threads, 0 = all cores                   |
//! | out                | (none)              | output directory                                |
//!
//! Relative paths are resolved against the directory of the config file.
//! Unknown keys are errors.

use crate::metrics::Units;
use crate::model::{DEFAULT_ALPHA, DEFAULT_ORDER};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("config: {0}")]
    Io(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedIdSource {
    Reference,
    MonteCarlo,
}

impl ExpectedIdSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpectedIdSource::Reference => "reference",
            ExpectedIdSource::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: Vec<PathBuf>,
    pub abc: Vec<PathBuf>,
    pub toy_pieces: Option<usize>,
    pub toy_seed: u64,
    pub max_tokens: Option<usize>,
    pub split_seed: u64,
    pub order: usize,
    pub alpha: f64,
    pub taus: Vec<f64>,
    pub sample_count: Option<usize>,
    pub sample_max_len: Option<usize>,
    pub seed: u64,
    pub units: Units,
    pub expected_id_source: ExpectedIdSource,
    pub mc_samples: usize,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: Vec::new(),
            abc: Vec::new(),
            toy_pieces: None,
            toy_seed: 2022,
            max_tokens: None,
            split_seed: 0,
            order: DEFAULT_ORDER,
            alpha: DEFAULT_ALPHA,
            taus: vec![0.9, 0.5, 0.2],
            sample_count: None,
            sample_max_len: None,
            seed: 0,
            units: Units::Nats,
            expected_id_source: ExpectedIdSource::Reference,
            mc_samples: 1000,
            workers: 0,
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse {value:?}")))
}

fn parse_paths(value: &str, base: &Path) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| base.join(s))
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, found {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(key, value, base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let absolute = std::path::absolute(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let base = absolute
            .parent()
            .map(Path::to_path_buf)
            .ok_or_else(|| ConfigError::Io(format!("{}: no parent directory", path.display())))?;
        let base = std::path::absolute(base)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &base)
    }

    /// Sets one key. Values are validated individually; cross-key checks run
    /// in [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<(), ConfigError> {
        match key {
            "corpus" => self.corpus = parse_paths(value, base_dir),
            "abc" => self.abc = parse_paths(value, base_dir),
            "toy_pieces" => self.toy_pieces = Some(parse_num(key, value)?),
            "toy_seed" => self.toy_seed = parse_num(key, value)?,
            "max_tokens" => self.max_tokens = Some(parse_num(key, value)?),
            "split_seed" => self.split_seed = parse_num(key, value)?,
            "order" => self.order = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "taus" => {
                self.taus = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_, _>>()?
            }
            "sample_count" => self.sample_count = Some(parse_num(key, value)?),
            "sample_max_len" => self.sample_max_len = Some(parse_num(key, value)?),
            "seed" => self.seed = parse_num(key, value)?,
            "units" => self.units = value.parse().map_err(|e: String| invalid(key, e))?,
            "expected_id_source" => {
                self.expected_id_source = match value {
                    "reference" => ExpectedIdSource::Reference,
                    "monte_carlo" => ExpectedIdSource::MonteCarlo,
                    other => {
                        return Err(invalid(
                            key,
                            format!("{other:?} is neither reference nor monte_carlo"),
                        ))
                    }
                }
            }
            "mc_samples" => self.mc_samples = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "out" => self.out = Some(base_dir.join(value)),
            other => return Err(invalid(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.corpus.is_empty() && self.abc.is_empty() && self.toy_pieces.is_none() {
            return Err(invalid(
                "corpus",
                "no corpus source (set corpus, abc or toy_pieces)",
            ));
        }
        if self.toy_pieces == Some(0) {
            return Err(invalid("toy_pieces", "must be at least 1"));
        }
        if self.max_tokens == Some(0) {
            return Err(invalid("max_tokens", "must be at least 1"));
        }
        if self.order == 0 {
            return Err(invalid("order", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid("alpha", "must be positive and finite"));
        }
        for (i, &tau) in self.taus.iter().enumerate() {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(invalid("taus", format!("{tau} is outside (0, 1]")));
            }
            if self.taus[..i].contains(&tau) {
                return Err(invalid("taus", format!("{tau} listed twice")));
            }
        }
        if self.sample_count == Some(0) {
            return Err(invalid("sample_count", "must be at least 1"));
        }
        if self.sample_max_len == Some(0) {
            return Err(invalid("sample_max_len", "must be at least 1"));
        }
        if self.mc_samples == 0 {
            return Err(invalid("mc_samples", "must be at least 1"));
        }
        Ok(())
    }

    /// Canonical text of every setting that affects results. `out` and
    /// `workers` are excluded: they do not change any metric.
    pub fn canonical_text(&self) -> String {
        fn paths(p: &[PathBuf]) -> String {
            p.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        }
        fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(ToString::to_string)
        }
        let taus = self
            .taus
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        let entries: Vec<(&str, Option<String>)> = vec![
            (
                "corpus",
                (!self.corpus.is_empty()).then(|| paths(&self.corpus)),
            ),
            ("abc", (!self.abc.is_empty()).then(|| paths(&self.abc))),
            ("toy_pieces", opt(&self.toy_pieces)),
            ("toy_seed", Some(self.toy_seed.to_string())),
            ("max_tokens", opt(&self.max_tokens)),
            ("split_seed", Some(self.split_seed.to_string())),
            ("order", Some(self.order.to_string())),
            ("alpha", Some(self.alpha.to_string())),
            ("taus", Some(taus)),
            ("sample_count", opt(&self.sample_count)),
            ("sample_max_len", opt(&self.sample_max_len)),
            ("seed", Some(self.seed.to_string())),
            ("units", Some(self.units.to_string())),
            (
                "expected_id_source",
                Some(self.expected_id_source.as_str().to_string()),
            ),
            ("mc_samples", Some(self.mc_samples.to_string())),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            if let Some(v) = v {
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(&v);
                out.push('\n');
            }
        }
        out
    }

    pub fn config_hash(&self) -> String {
        crate::corpus::sha256_hex(self.canonical_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_defaults() {
        let cfg = ExperimentConfig::parse(
            "# demo\ntoy_pieces = 50\ntaus = 0.8, 0.3\nunits = bits\ncorpus = a.jsonl, b.jsonl\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(cfg.toy_pieces, Some(50));
        assert_eq!(cfg.taus, vec![0.8, 0.3]);
        assert_eq!(cfg.units, Units::Bits);
        assert_eq!(cfg.order, 5);
        assert_eq!(
            cfg.corpus,
            vec![
                PathBuf::from("/data/a.jsonl"),
                PathBuf::from("/data/b.jsonl")
            ]
        );
    }

    #[test]
    fn tau_out_of_range_names_field() {
        let err =
            ExperimentConfig::parse("toy_pieces = 5\ntaus = 0.5, 1.3", Path::new(".")).unwrap_err();
        match err {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "taus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e =
            ExperimentConfig::parse("toy_pieces = 5\ncolour = red", Path::new(".")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref key, .. } if key == "colour"));
        let e = ExperimentConfig::parse("toy_pieces 5", Path::new(".")).unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
        let e = ExperimentConfig::parse("order = 3", Path::new(".")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref key, .. } if key == "corpus"));
        let e = ExperimentConfig::parse("toy_pieces = 5\norder = x", Path::new(".")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref key, .. } if key == "order"));
    }

    #[test]
    fn canonical_text_round_trips_and_ignores_execution_knobs() {
        let cfg = ExperimentConfig::parse(
            "toy_pieces = 20\nalpha = 0.5\nworkers = 3\nout = x",
            Path::new("/tmp"),
        )
        .unwrap();
        let again =
            ExperimentConfig::parse(&cfg.canonical_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again.canonical_text(), cfg.canonical_text());
        let other = ExperimentConfig {
            workers: 1,
            out: None,
            ..cfg.clone()
        };
        assert_eq!(other.config_hash(), cfg.config_hash());
    }
}
