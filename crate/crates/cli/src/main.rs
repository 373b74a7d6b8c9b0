use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hlrel_core::categorizer::CategorizerConfig;
use hlrel_core::commands::{
    cmd_eval, cmd_export_annotation, cmd_ingest, cmd_score, cmd_train, cmd_train_categorizer, AnnotationArgs,
    CategorizerArgs, EncoderMode, EvalArgs, IngestArgs, RunConfig, ScoreArgs, ScoreScope, SelectProtocol, TrainArgs,
    DEFAULT_KS,
};
use hlrel_core::encoder::HEADLINE_DIM;
use hlrel_core::manifest::{self, Clock};
use hlrel_core::ranker::cohen_kappa;
use hlrel_core::synthetic::{generate, SyntheticConfig};
use hlrel_core::{Category, Error, Result};

/// Environment variable setting the number of worker threads.
const THREADS_VAR: &str = "HLREL_THREADS";

#[derive(Parser)]
#[command(
    name = "hlrel",
    version,
    about = "Train a headline attention model and rank headlines by financial relevance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align headlines with index returns, label days and write a dataset.
    Ingest(IngestCmd),
    /// Train the movement classifier on an ingested dataset.
    Train(TrainCmd),
    /// Score and rank headlines with a trained model.
    Score(ScoreCmd),
    /// Per-category maximum validation accuracy.
    Eval(EvalCmd),
    /// Train the topic classifier from `class<TAB>text` lines.
    TrainCategorizer(CategorizerCmd),
    /// Draw a blind annotation sample from a ranking.
    ExportAnnotation(AnnotationCmd),
    /// Cohen's kappa between two files of labels, one per line.
    Kappa { first: PathBuf, second: PathBuf },
    /// Write a planted-signal price and headline corpus.
    Synth(SynthCmd),
    /// Check an output directory against its manifest.
    Verify { dir: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EncoderFlags {
    /// Precomputed headline vectors (text or binary).
    #[arg(long, conflicts_with = "hash_encoder")]
    embeddings: Option<PathBuf>,
    /// Use the built-in feature-hashing encoder.
    #[arg(long)]
    hash_encoder: bool,
}

#[derive(Args)]
struct IngestCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    prices: PathBuf,
    #[arg(long)]
    headlines: PathBuf,
    #[arg(long)]
    index_name: Option<String>,
    /// Fixed label threshold in percent.
    #[arg(long, conflicts_with = "search_grid")]
    threshold: Option<f64>,
    /// Candidate thresholds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    search_grid: Option<Vec<f64>>,
    /// Assign categories with this categorizer checkpoint.
    #[arg(long)]
    categorizer: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Select {
    MaxAcc,
    MinLoss,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data_dir: PathBuf,
    #[command(flatten)]
    encoder: EncoderFlags,
    #[arg(long, value_enum)]
    select: Option<Select>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Scope,
    /// Category whose share at the top of the ranking is reported.
    #[arg(long, default_value = "business")]
    target: String,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data_dir: PathBuf,
    #[command(flatten)]
    encoder: EncoderFlags,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct CategorizerCmd {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    hash_seed: u64,
    #[arg(long, default_value_t = HEADLINE_DIM)]
    dims: usize,
    #[arg(long, default_value_t = 15)]
    max_tokens: usize,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct AnnotationCmd {
    /// `ranked.tsv` written by `score`.
    #[arg(long)]
    ranked: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    top_n: usize,
    #[arg(long, default_value_t = 200)]
    uniform_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    days: usize,
    #[arg(long, default_value_t = 30)]
    headlines_per_day: usize,
    #[arg(long, default_value_t = 0.15)]
    signal_fraction: f64,
    /// Break the link between signal words and labels.
    #[arg(long)]
    shuffle_labels: bool,
    /// Put every signal headline in this category.
    #[arg(long)]
    signal_category: Option<String>,
    /// Leave the category field out of the headline file.
    #[arg(long)]
    no_categories: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply_encoder(config: &mut RunConfig, flags: &EncoderFlags) -> Option<PathBuf> {
    if flags.hash_encoder {
        config.encoder.mode = EncoderMode::Hashed;
        config.encoder.embeddings = None;
    }
    if flags.embeddings.is_some() {
        config.encoder.mode = EncoderMode::Precomputed;
    }
    flags.embeddings.clone()
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Validation {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    let clock = Clock::from_env();
    match cli.command {
        Command::Ingest(cmd) => {
            let mut config = load_config(&cmd.common)?;
            if let Some(name) = cmd.index_name {
                config.index_name = name;
            }
            if cmd.threshold.is_some() {
                config.threshold = cmd.threshold;
            }
            if let Some(grid) = cmd.search_grid {
                config.threshold = None;
                config.search_grid = grid;
            }
            let (summary, _) = cmd_ingest(&IngestArgs {
                prices: cmd.prices,
                headlines: cmd.headlines,
                out_dir: cmd.common.out_dir,
                config,
                categorizer: cmd.categorizer,
                clock,
            })?;
            print_json(&summary)
        }
        Command::Train(cmd) => {
            let mut config = load_config(&cmd.common)?;
            let embeddings = apply_encoder(&mut config, &cmd.encoder);
            if let Some(select) = cmd.select {
                config.training.select = match select {
                    Select::MaxAcc => SelectProtocol::MaxAcc,
                    Select::MinLoss => SelectProtocol::MinLoss,
                };
            }
            if let Some(epochs) = cmd.epochs {
                config.training.epochs = epochs;
            }
            let (model, _) = cmd_train(&TrainArgs {
                data_dir: cmd.data_dir,
                out_dir: cmd.common.out_dir,
                config,
                embeddings,
                clock,
            })?;
            print_json(&model.metadata.selection)
        }
        Command::Score(cmd) => {
            let target: Category = cmd.target.parse()?;
            let scope = match cmd.split {
                Scope::Train => ScoreScope::Train,
                Scope::Val => ScoreScope::Val,
                Scope::Test => ScoreScope::Test,
                Scope::All => ScoreScope::All,
            };
            let (_, report, _) = cmd_score(&ScoreArgs {
                model: cmd.model,
                data_dir: cmd.data_dir,
                out_dir: cmd.out_dir,
                scope,
                target,
                ks: cmd.ks.unwrap_or_else(|| DEFAULT_KS.to_vec()),
                embeddings: cmd.embeddings,
                clock,
            })?;
            report.write_table(std::io::stdout()).map_err(|e| Error::Validation {
                path: "<stdout>".into(),
                message: e.to_string(),
            })
        }
        Command::Eval(cmd) => {
            let mut config = load_config(&cmd.common)?;
            let embeddings = apply_encoder(&mut config, &cmd.encoder);
            if let Some(epochs) = cmd.epochs {
                config.training.epochs = epochs;
            }
            let (rows, _) = cmd_eval(&EvalArgs {
                data_dir: cmd.data_dir,
                out_dir: cmd.common.out_dir,
                config,
                embeddings,
                clock,
            })?;
            print_json(&rows)
        }
        Command::TrainCategorizer(cmd) => {
            let mut config = CategorizerConfig {
                seed: cmd.seed,
                ..CategorizerConfig::default()
            };
            if let Some(epochs) = cmd.epochs {
                config.epochs = epochs;
            }
            let (report, _) = cmd_train_categorizer(&CategorizerArgs {
                labeled: cmd.labeled,
                out_dir: cmd.out_dir,
                config,
                dims: cmd.dims,
                hash_seed: cmd.hash_seed,
                max_tokens: cmd.max_tokens,
                clock,
            })?;
            print_json(&report)
        }
        Command::ExportAnnotation(cmd) => {
            let manifest = cmd_export_annotation(&AnnotationArgs {
                ranked: cmd.ranked,
                out_dir: cmd.out_dir,
                top_n: cmd.top_n,
                uniform_n: cmd.uniform_n,
                seed: cmd.seed,
                clock,
            })?;
            print_json(&manifest.artifacts)
        }
        Command::Kappa { first, second } => {
            let kappa = cohen_kappa(&read_labels(&first)?, &read_labels(&second)?)?;
            println!("{kappa:.4}");
            Ok(())
        }
        Command::Synth(cmd) => {
            let signal_category = cmd.signal_category.as_deref().map(str::parse::<Category>).transpose()?;
            let corpus = generate(&SyntheticConfig {
                days: cmd.days,
                headlines_per_day: cmd.headlines_per_day,
                signal_fraction: cmd.signal_fraction,
                shuffle_labels: cmd.shuffle_labels,
                signal_category,
                seed: cmd.seed,
                ..SyntheticConfig::default()
            })?;
            std::fs::create_dir_all(&cmd.out_dir).map_err(|e| Error::Validation {
                path: cmd.out_dir.clone(),
                message: e.to_string(),
            })?;
            corpus.write_prices(&cmd.out_dir.join("prices.csv"))?;
            corpus.write_headlines(&cmd.out_dir.join("headlines.jsonl"), !cmd.no_categories)?;
            let signal: String = corpus.signal_ids.iter().map(|id| format!("{id}\n")).collect();
            std::fs::write(cmd.out_dir.join("signal_ids.txt"), signal).map_err(|e| Error::Validation {
                path: cmd.out_dir.join("signal_ids.txt"),
                message: e.to_string(),
            })?;
            println!(
                "{} headlines over {} days, {} signal",
                corpus.headlines.len(),
                cmd.days,
                corpus.signal_ids.len()
            );
            Ok(())
        }
        Command::Verify { dir } => {
            let bad = manifest::verify(&dir)?;
            if bad.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(Error::Validation {
                    path: dir,
                    message: format!("digest mismatch: {}", bad.join(", ")),
                })
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set {THREADS_VAR}={n}: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
