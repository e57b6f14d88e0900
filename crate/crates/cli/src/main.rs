//! `mosaware`: batch front end for corpus synthesis, feature extraction,
//! dataset splitting, training, prediction, evaluation and gradient checks.

mod commands;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mosaware::models::{Family, FeatureVariant};

/// Content-aware MOS prediction toolkit.
#[derive(Debug, Parser)]
#[command(name = "mosaware", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with prosody-dependent ground truth.
    SynthData(SynthArgs),
    /// Extract F0, phone-level prosody and frame alignments for a manifest.
    ExtractFeatures(ExtractArgs),
    /// Build train/valid/test id lists from a ratings table.
    Split(SplitArgs),
    /// Train a model and write a checkpoint directory with its log.
    Train(TrainArgs),
    /// Score utterances with a trained checkpoint.
    Predict(PredictArgs),
    /// Compare predictions with mean ratings at utterance and system level.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients of every layer and architecture.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON generator spec; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    systems: Option<usize>,
    #[arg(long)]
    texts: Option<usize>,
    #[arg(long)]
    listeners: Option<usize>,
    #[arg(long)]
    ratings_per_utterance: Option<usize>,
    /// Weight of prosodic quality in the true MOS.
    #[arg(long)]
    beta: Option<f64>,
    /// Standard deviation of truth and rating noise.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SignalArgs {
    /// STFT size in samples.
    #[arg(long)]
    fft_size: Option<usize>,
    /// STFT hop in samples.
    #[arg(long)]
    hop: Option<usize>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output prosody table (JSON).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    signal: SignalArgs,
}

fn parse_locale_counts(s: &str) -> std::result::Result<BTreeMap<String, usize>, String> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|part| {
            let (locale, n) = part
                .split_once('=')
                .ok_or_else(|| format!("expected LOCALE=COUNT, got `{part}`"))?;
            let n = n
                .parse::<usize>()
                .map_err(|e| format!("bad count in `{part}`: {e}"))?;
            Ok((locale.to_string(), n))
        })
        .collect()
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["ratings", "manifest"]))]
struct SplitArgs {
    /// Ratings CSV.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Manifest whose ratings table is split.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for id lists and diagnostics.
    #[arg(long)]
    out: PathBuf,
    /// JSON split spec; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of candidate splits to score.
    #[arg(long)]
    candidates: Option<usize>,
    /// First candidate seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    unseen_systems: Option<usize>,
    #[arg(long)]
    unseen_texts: Option<usize>,
    /// Unseen validation listeners per locale, e.g. `US=6,GB=2,CA=2`.
    #[arg(long, value_parser = parse_locale_counts)]
    valid_listeners: Option<BTreeMap<String, usize>>,
    /// Unseen test listeners per locale, e.g. `US=4,GB=4,CA=2`.
    #[arg(long, value_parser = parse_locale_counts)]
    test_listeners: Option<BTreeMap<String, usize>>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Training utterance ids, one per line.
    #[arg(long)]
    train_list: PathBuf,
    /// Validation utterance ids, one per line.
    #[arg(long)]
    valid_list: PathBuf,
    /// Checkpoint output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Precomputed prosody table from `extract-features`.
    #[arg(long)]
    prosody: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    model: Option<Family>,
    #[arg(long, value_parser = parse_variant)]
    feature: Option<FeatureVariant>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Weight of the frame-level loss.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Divides every hidden width.
    #[arg(long)]
    divisor: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[command(flatten)]
    signal: SignalArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Utterance ids to score; defaults to the whole manifest.
    #[arg(long)]
    list: Option<PathBuf>,
    #[arg(long)]
    prosody: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("truth").required(true).args(["ratings", "manifest"]))]
struct EvaluateArgs {
    /// Predictions CSV with header `utterance_id,score`.
    #[arg(long)]
    predictions: PathBuf,
    /// Ratings CSV supplying truths and systems.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Manifest whose ratings supply truths and systems.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Restrict truths to these utterance ids.
    #[arg(long)]
    list: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Only this family.
    #[arg(long, value_parser = parse_family)]
    model: Option<Family>,
    /// Only this feature variant.
    #[arg(long, value_parser = parse_variant)]
    feature: Option<FeatureVariant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    /// Report JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: mosaware::Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<FeatureVariant, String> {
    s.parse().map_err(|e: mosaware::Error| e.to_string())
}

fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("MOSAWARE_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .with_context(|| format!("MOSAWARE_THREADS={raw:?} is not a count"))?;
        if n == 0 {
            anyhow::bail!("MOSAWARE_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::ExtractFeatures(a) => commands::extract_features(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
