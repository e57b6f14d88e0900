use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mosaware::dataset::{
    generate_synthetic, load_manifest, read_ratings, utterance_systems, utterance_truths,
    DatasetManifest, RatingRecord, SyntheticSpec, MANIFEST_FILE,
};
use mosaware::datasplit::{read_id_list, select_best_split, write_split, SplitSpec};
use mosaware::metrics::evaluate as score;
use mosaware::models::{architecture_gradient_check, Family};
use mosaware::tensor::layer_gradient_suite;
use mosaware::training::{
    extract_all_prosody, predict_manifest, train_from_manifest, Checkpoint, ProsodyTable,
    SignalConfig,
};

use crate::{
    EvaluateArgs, ExtractArgs, GradcheckArgs, PredictArgs, SignalArgs, SplitArgs, SynthArgs,
    TrainArgs,
};

pub const TRAIN_LOG: &str = "train.log";

fn override_with<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Accepts either the manifest file or the corpus directory holding it.
fn open_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(load_manifest(&file)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn signal_config(base: SignalConfig, args: &SignalArgs) -> SignalConfig {
    let mut signal = base;
    override_with(&mut signal.fft_size, args.fft_size);
    override_with(&mut signal.hop, args.hop);
    signal
}

pub fn synth_data(args: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = load_config(args.config.as_deref())?;
    override_with(&mut spec.utterances, args.utterances);
    override_with(&mut spec.systems, args.systems);
    override_with(&mut spec.texts, args.texts);
    override_with(&mut spec.listeners, args.listeners);
    override_with(&mut spec.ratings_per_utterance, args.ratings_per_utterance);
    override_with(&mut spec.beta, args.beta);
    override_with(&mut spec.noise, args.noise);
    override_with(&mut spec.seed, args.seed);
    let manifest = generate_synthetic(&spec, &args.out)?;
    println!(
        "wrote {} utterances and {} ratings to {}",
        manifest.utterances.len(),
        manifest.ratings.len(),
        manifest.root.join(MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn extract_features(args: ExtractArgs) -> Result<()> {
    let manifest = open_manifest(&args.manifest)?;
    let signal = signal_config(SignalConfig::default(), &args.signal);
    let table = extract_all_prosody(&manifest, &signal)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    table.save(&args.out)?;
    println!(
        "extracted prosody for {} utterances into {}",
        table.utterances.len(),
        args.out.display()
    );
    Ok(())
}

pub fn split(args: SplitArgs) -> Result<()> {
    let records: Vec<RatingRecord> = match (&args.ratings, &args.manifest) {
        (Some(r), _) => read_ratings(r)?,
        (None, Some(m)) => open_manifest(m)?.ratings,
        (None, None) => bail!("one of --ratings or --manifest is required"),
    };
    let mut spec: SplitSpec = load_config(args.config.as_deref())?;
    override_with(&mut spec.candidates, args.candidates);
    override_with(&mut spec.seed, args.seed);
    override_with(&mut spec.train_fraction, args.train_fraction);
    override_with(&mut spec.valid_fraction, args.valid_fraction);
    override_with(&mut spec.test_fraction, args.test_fraction);
    override_with(&mut spec.unseen_systems, args.unseen_systems);
    override_with(&mut spec.unseen_texts, args.unseen_texts);
    override_with(&mut spec.valid_listeners, args.valid_listeners);
    override_with(&mut spec.test_listeners, args.test_listeners);
    let search = select_best_split(&records, &spec)?;
    write_split(&args.out, &search)?;
    let b = &search.best;
    println!(
        "seed {} objective {:.6}: {} train / {} valid / {} test utterances ({} of {} candidates infeasible)",
        b.seed,
        b.objective(),
        b.train.len(),
        b.valid.len(),
        b.test.len(),
        search.infeasible,
        search.candidates
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let manifest = open_manifest(&args.manifest)?;
    let train_ids = read_id_list(&args.train_list)?;
    let valid_ids = read_id_list(&args.valid_list)?;
    let mut config: mosaware::training::TrainConfig = load_config(args.config.as_deref())?;
    override_with(&mut config.family, args.model);
    override_with(&mut config.variant, args.feature);
    override_with(&mut config.batch_size, args.batch_size);
    override_with(&mut config.max_epochs, args.max_epochs);
    override_with(&mut config.patience, args.patience);
    override_with(&mut config.learning_rate, args.learning_rate);
    override_with(&mut config.alpha, args.alpha);
    override_with(&mut config.seed, args.seed);
    override_with(&mut config.divisor, args.divisor);
    override_with(&mut config.dropout, args.dropout);
    let prosody = args
        .prosody
        .as_deref()
        .map(ProsodyTable::load)
        .transpose()?;
    let base = prosody
        .as_ref()
        .map_or_else(SignalConfig::default, |t| t.signal);
    let signal = signal_config(base, &args.signal);

    let mut log = Vec::new();
    let trained = train_from_manifest(
        &manifest,
        &train_ids,
        &valid_ids,
        &config,
        &signal,
        prosody.as_ref(),
        &mut log,
    )?;
    trained.checkpoint.save(&args.out)?;
    let log_path = args.out.join(TRAIN_LOG);
    std::fs::write(&log_path, &log).with_context(|| format!("writing {}", log_path.display()))?;
    println!(
        "{}/{}: best valid MSE {:.6} at epoch {} of {}; checkpoint in {}",
        config.family,
        config.variant,
        trained.checkpoint.best_valid_mse,
        trained.checkpoint.best_epoch,
        trained.history.len(),
        args.out.display()
    );
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let manifest = open_manifest(&args.manifest)?;
    let ids = args
        .list
        .as_deref()
        .map(read_id_list)
        .transpose()?
        .unwrap_or_default();
    let prosody = args
        .prosody
        .as_deref()
        .map(ProsodyTable::load)
        .transpose()?;
    let scores = predict_manifest(&checkpoint, &manifest, &ids, prosody.as_ref())?;
    let mut body = String::from("utterance_id,score\n");
    for (id, s) in &scores {
        body.push_str(&format!("{id},{s}\n"));
    }
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRow {
    utterance_id: String,
    score: f64,
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let row = row.with_context(|| format!("{} line {}", path.display(), i + 2))?;
        if !row.score.is_finite() {
            bail!("{} line {}: non-finite score", path.display(), i + 2);
        }
        if out.insert(row.utterance_id.clone(), row.score).is_some() {
            bail!(
                "{} line {}: duplicate utterance {}",
                path.display(),
                i + 2,
                row.utterance_id
            );
        }
    }
    Ok(out)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let predictions = read_predictions(&args.predictions)?;
    let records = match (&args.ratings, &args.manifest) {
        (Some(r), _) => read_ratings(r)?,
        (None, Some(m)) => open_manifest(m)?.ratings,
        (None, None) => bail!("one of --ratings or --manifest is required"),
    };
    let mut truths = utterance_truths(&records);
    if let Some(list) = &args.list {
        let keep: std::collections::BTreeSet<String> = read_id_list(list)?.into_iter().collect();
        if let Some(missing) = keep.iter().find(|id| !truths.contains_key(*id)) {
            bail!("listed utterance {missing} has no ratings");
        }
        truths.retain(|k, _| keep.contains(k));
    }
    let systems = utterance_systems(&records);
    let report = score(&predictions, &truths, &systems)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Serialize)]
struct ArchitectureCheck {
    model: String,
    feature: String,
    max_relative_error: f64,
    worst_parameter: Option<String>,
    checked_scalars: usize,
}

#[derive(Serialize)]
struct GradcheckReport {
    seed: u64,
    threshold: f64,
    layers: BTreeMap<String, f64>,
    architectures: Vec<ArchitectureCheck>,
    passed: bool,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let layers: BTreeMap<String, f64> = layer_gradient_suite(args.seed)?
        .into_iter()
        .map(|(name, r)| (name, r.max))
        .collect();
    let mut architectures = Vec::new();
    for family in Family::ALL
        .into_iter()
        .filter(|f| args.model.is_none_or(|m| m == *f))
    {
        for variant in family
            .variants()
            .into_iter()
            .filter(|v| args.feature.is_none_or(|f| f == *v))
        {
            let r = architecture_gradient_check(family, variant, args.seed)?;
            architectures.push(ArchitectureCheck {
                model: family.to_string(),
                feature: variant.to_string(),
                max_relative_error: r.max,
                worst_parameter: r.worst().map(|(n, _)| n.to_string()),
                checked_scalars: r.checked_scalars,
            });
        }
    }
    if architectures.is_empty() {
        bail!("no architecture matches the requested model and feature");
    }
    let passed = layers
        .values()
        .chain(architectures.iter().map(|a| &a.max_relative_error))
        .all(|e| *e < args.threshold);
    let report = GradcheckReport {
        seed: args.seed,
        threshold: args.threshold,
        layers,
        architectures,
        passed,
    };
    for (name, err) in &report.layers {
        println!("layer {name:<24} {err:.3e}");
    }
    for a in &report.architectures {
        println!(
            "{:<6} {:<18} {:.3e}",
            a.model, a.feature, a.max_relative_error
        );
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if !report.passed {
        bail!("gradient error above {} (see report)", args.threshold);
    }
    Ok(())
}
