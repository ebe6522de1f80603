use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use melody_typicality::corpus::{self, Corpus, Split, TokenRecord, ToyCorpusParams};
use melody_typicality::experiment::{self, ExperimentConfig};
use melody_typicality::metrics::{self, Estimate, Units};
use melody_typicality::model::NGramModel;
use melody_typicality::sampler::{self, SamplerConfig, Strategy};
use melody_typicality::tokenizer::Token;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "melotyp", version, about = "Melody typicality toolkit")]
struct Cli {
    /// Seed for the subcommand's randomness (split, sampling, toy corpus)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Units for reported information quantities
    #[arg(long, global = true, value_enum)]
    units: Option<UnitsArg>,
    /// Experiment configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    Nats,
    Bits,
}

impl From<UnitsArg> for Units {
    fn from(u: UnitsArg) -> Self {
        match u {
            UnitsArg::Nats => Units::Nats,
            UnitsArg::Bits => Units::Bits,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Conventional,
    Typical,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus to <out>/toy_corpus.jsonl
    GenToyCorpus {
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Encode JSONL corpora and ABC files to <out>/tokens.jsonl
    Tokenize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write the train/validation/test assignment to <out>/split.csv
    Split { input: PathBuf },
    /// Train an n-gram model on the train split, writing <out>/model.json
    Train {
        input: PathBuf,
        #[arg(long, default_value_t = melody_typicality::model::DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = melody_typicality::model::DEFAULT_ALPHA)]
        alpha: f64,
        /// Train on every piece instead of the train split
        #[arg(long)]
        all: bool,
    },
    /// Sample sequences from a model into <out>/samples.jsonl
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "conventional")]
        strategy: StrategyArg,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 512)]
        max_len: usize,
        /// Worker threads, 0 = all cores
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Score token sequences, writing <out>/events.csv and <out>/sequences.csv
    Analyze {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        /// Expected information density (nats); defaults to the input mean
        #[arg(long)]
        expected_id: Option<f64>,
    },
    /// Run the full experiment from --config (or a previous manifest)
    Report {
        /// Re-run the configuration stored in a manifest.json
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Worker threads, overriding the config
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_any(path: &Path) -> Result<Corpus> {
    let is_abc = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("abc"));
    if is_abc {
        Ok(Corpus::new(vec![corpus::load_abc_file(path)?])?)
    } else {
        corpus::load_jsonl(path).with_context(|| format!("loading {}", path.display()))
    }
}

fn read_tokens(path: &Path) -> Result<Vec<TokenRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (_, records) = corpus::read_token_jsonl(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(records)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let units: Units = cli.units.map(Into::into).unwrap_or_default();
    match &cli.command {
        Command::GenToyCorpus { count } => {
            let params = ToyCorpusParams {
                pieces: *count,
                seed: cli.seed.unwrap_or(ToyCorpusParams::default().seed),
                ..ToyCorpusParams::default()
            };
            let path = out_dir(&cli)?.join("toy_corpus.jsonl");
            corpus::generate_toy_corpus(&params).write_jsonl(&path)?;
            println!("wrote {count} pieces to {}", path.display());
        }
        Command::Tokenize { inputs } => {
            let mut records = Vec::new();
            for input in inputs {
                for (id, seq) in load_any(input)?.tokenize()? {
                    records.push(TokenRecord {
                        id,
                        tokens: seq.into_tokens(),
                        truncated: false,
                    });
                }
            }
            let path = out_dir(&cli)?.join("tokens.jsonl");
            corpus::write_token_jsonl(BufWriter::new(File::create(&path)?), None, &records)?;
            println!("wrote {} sequences to {}", records.len(), path.display());
        }
        Command::Split { input } => {
            let corpus = load_any(input)?;
            let assignment = corpus::split(&corpus, cli.seed.unwrap_or(0));
            let path = out_dir(&cli)?.join("split.csv");
            assignment.write_csv(BufWriter::new(File::create(&path)?))?;
            println!(
                "train {} / validation {} / test {} -> {}",
                assignment.count(Split::Train),
                assignment.count(Split::Validation),
                assignment.count(Split::Test),
                path.display()
            );
        }
        Command::Train {
            input,
            order,
            alpha,
            all,
        } => {
            let corpus = load_any(input)?;
            let assignment = corpus::split(&corpus, cli.seed.unwrap_or(0));
            let seqs: Vec<Vec<Token>> = corpus
                .tokenize()?
                .into_iter()
                .filter(|(id, _)| *all || assignment.get(id) == Some(Split::Train))
                .map(|(_, s)| s.into_tokens())
                .collect();
            let model = NGramModel::train(&seqs, *order, *alpha)?;
            let path = out_dir(&cli)?.join("model.json");
            model.save(&path)?;
            println!(
                "trained order-{order} model on {} sequences ({} tokens) -> {}",
                seqs.len(),
                model.total_tokens(),
                path.display()
            );
        }
        Command::Sample {
            model,
            strategy,
            tau,
            count,
            max_len,
            workers,
        } => {
            let bytes =
                std::fs::read(model).with_context(|| format!("reading {}", model.display()))?;
            let m = NGramModel::from_json_bytes(&bytes)?;
            let strategy = match (strategy, tau) {
                (StrategyArg::Conventional, None) => Strategy::Conventional,
                (StrategyArg::Conventional, Some(_)) => bail!("--tau requires --strategy typical"),
                (StrategyArg::Typical, Some(tau)) => Strategy::Typical { tau: *tau },
                (StrategyArg::Typical, None) => bail!("--strategy typical requires --tau"),
            };
            let seed = cli.seed.unwrap_or(0);
            let config = SamplerConfig::new(strategy, *max_len, seed)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(*workers)
                .build()?;
            let samples = pool.install(|| sampler::sample_batch(&m, &config, *count))?;
            let records: Vec<TokenRecord> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| TokenRecord {
                    id: format!("sample-{i:05}"),
                    tokens: s.tokens.clone(),
                    truncated: s.truncated,
                })
                .collect();
            let meta = serde_json::json!({
                "strategy": strategy.label(),
                "tau": strategy.tau(),
                "seed": seed,
                "max_len": max_len,
                "model_hash": corpus::sha256_hex(&bytes),
                "truncated": samples.iter().filter(|s| s.truncated).count(),
            });
            let path = out_dir(&cli)?.join("samples.jsonl");
            corpus::write_token_jsonl(BufWriter::new(File::create(&path)?), Some(&meta), &records)?;
            println!("wrote {count} samples to {}", path.display());
        }
        Command::Analyze {
            model,
            input,
            expected_id,
        } => {
            let m = NGramModel::load(model)?;
            let records = read_tokens(input)?;
            if records.is_empty() {
                bail!("{} holds no sequences", input.display());
            }
            // the eos closing a truncated sample was forced, not drawn
            let scored = |r: &TokenRecord| -> usize {
                r.tokens.len() - usize::from(r.truncated && r.tokens.len() > 1)
            };
            let analyses = records
                .iter()
                .map(|r| metrics::analyze_sequence(&m, &r.tokens[..scored(r)]))
                .collect::<Result<Vec<_>, _>>()?;
            let scale = units.scale();
            let ids: Vec<f64> = analyses.iter().map(|a| a.summary.id).collect();
            let mean = expected_id
                .unwrap_or_else(|| Estimate::from_values(&ids).map(|e| e.mean).unwrap_or(0.0));
            let dir = out_dir(&cli)?;
            let mut ev = csv::Writer::from_path(dir.join("events.csv"))?;
            ev.write_record([
                "piece_id", "position", "token_id", "ic", "entropy", "epsilon",
            ])?;
            let mut sq = csv::Writer::from_path(dir.join("sequences.csv"))?;
            sq.write_record(["piece_id", "length", "total_ic", "id", "epsilon_id"])?;
            for (r, a) in records.iter().zip(&analyses) {
                for (pos, e) in a.events.iter().enumerate() {
                    ev.write_record([
                        r.id.clone(),
                        pos.to_string(),
                        r.tokens[pos].id().to_string(),
                        (e.ic * scale).to_string(),
                        (e.entropy * scale).to_string(),
                        (e.epsilon * scale).to_string(),
                    ])?;
                }
                let s = a.summary.with_expected_id(mean);
                sq.write_record([
                    r.id.clone(),
                    s.length.to_string(),
                    (s.total_ic * scale).to_string(),
                    (s.id * scale).to_string(),
                    (s.epsilon_id.unwrap_or(0.0) * scale).to_string(),
                ])?;
            }
            ev.flush()?;
            sq.flush()?;
            println!("analyzed {} sequences -> {}", records.len(), dir.display());
        }
        Command::Report { manifest, workers } => {
            let mut config = match (manifest, &cli.config) {
                (Some(m), _) => experiment::config_from_manifest(m)?,
                (None, Some(c)) => ExperimentConfig::from_file(c)?,
                (None, None) => bail!("report needs --config or --manifest"),
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(u) = cli.units {
                config.units = u.into();
            }
            if let Some(w) = workers {
                config.workers = *w;
            }
            let out = cli
                .out
                .clone()
                .or_else(|| config.out.clone())
                .context("report needs --out or an `out` key in the config")?;
            let (bundle, manifest) = experiment::run_and_write(&config, &out)?;
            println!("manifest config hash {}", manifest.config_hash);
            for c in &bundle.conditions {
                println!(
                    "{:<16} events {:>7}  eps stdev {:.4}  sequences {:>5}  mean ID {:.4} ± {:.4}  truncated {}",
                    c.label,
                    c.events.len(),
                    c.event_summary.stdev,
                    c.sequences.len(),
                    c.id_estimate.mean,
                    c.id_estimate.std_err,
                    c.truncated
                );
            }
            match experiment::compare_conditions(&bundle) {
                Ok(t) => {
                    println!(
                        "epsilon stdev shrinks with tau:     {}",
                        t.epsilon_stdev_decreasing.holds
                    );
                    println!(
                        "typical stdev <= conventional:      {}",
                        t.epsilon_stdev_below_conventional.holds
                    );
                    println!(
                        "mean ID shrinks with tau:           {} (all steps > 2 SE: {})",
                        t.mean_id_decreasing.holds, t.mean_id_margins_exceed_2se
                    );
                    println!(
                        "conventional closest to reference:  {}",
                        t.conventional_closest_to_reference.holds
                    );
                }
                Err(e) => println!("trend comparison skipped: {e}"),
            }
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}
