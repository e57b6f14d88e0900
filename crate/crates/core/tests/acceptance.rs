//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Positional arguments select criteria by
//! number or name fragment.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mosaware::dataset::{
    generate_synthetic, plan_utterances, synthetic_ratings, utterance_systems, utterance_truths,
    DatasetManifest, RatingRecord, SyntheticSpec,
};
use mosaware::datasplit::{
    make_split_candidate, select_best_split, wasserstein_1d, write_split, SplitSpec,
};
use mosaware::features::{
    combine_token_layers, EmbeddingArray, LinguisticDims, TokenCombine, Vocabulary,
};
use mosaware::metrics::{evaluate, kendall_tau_b, pearson, spearman};
use mosaware::models::Model;
use mosaware::models::{
    architecture_gradient_check, Family, FeatureVariant, ModelConfig, ModelDims,
};
use mosaware::signal::{
    estimate_f0, FrameGrid, PitchConfig, Waveform, DEFAULT_FFT_SIZE, DEFAULT_HOP,
};
use mosaware::tensor::{layer_gradient_suite, CellKind, ParameterStore};
use mosaware::training::{
    extract_all_prosody, train_from_manifest, ProsodyTable, SignalConfig, TrainConfig,
};

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

const METRIC_TOLERANCE: f64 = 1e-12;
const METRIC_CASES: usize = 1000;
const METRIC_MAX_LEN: usize = 200;

const WASSERSTEIN_CASES: usize = 500;
const WASSERSTEIN_TOLERANCE: f64 = 1e-6;

const F0_TOLERANCE: f64 = 0.02;
const F0_TONES: usize = 30;
const F0_RANGE: (f64, f64) = (80.0, 400.0);
const F0_BUDGET: Duration = Duration::from_secs(30);

const OVERFIT_UTTERANCES: usize = 32;
/// Large enough that no two of the utterances share a text.
const OVERFIT_TEXTS: usize = 100_000;
const OVERFIT_MSE: f64 = 0.01;
const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const OVERFIT_DIVISOR: usize = 16;
const OVERFIT_LEARNING_RATE: f64 = 1e-3;

const LEARN_TRAIN: usize = 400;
const LEARN_TEST: usize = 100;
const LEARN_VALID: usize = 40;
const LEARN_SEEDS: u64 = 5;
const LEARN_MARGIN: f64 = 0.10;
const LEARN_EXPLAINED: (f64, f64) = (0.4, 0.6);
const LEARN_BETA: f64 = 0.5;
const LEARN_DIVISOR: usize = 16;
const LEARN_EPOCHS: usize = 30;
const LEARN_PATIENCE: usize = 5;
const LEARN_LEARNING_RATE: f64 = 1e-3;

const SPLIT_RATINGS: usize = 2000;
const SPLIT_CANDIDATES: usize = 100;
const SPLIT_BUDGET: Duration = Duration::from_secs(10);

type Criterion = (&'static str, &'static str, fn() -> Outcome);
type ExpectedShapes = Vec<(FeatureVariant, Vec<(&'static str, Vec<usize>)>)>;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut checks = 0;
    for (name, report) in layer_gradient_suite(0).expect("layer suite runs") {
        checks += 1;
        if report.max > worst.1 {
            worst = (format!("layer {name}"), report.max);
        }
    }
    for family in Family::ALL {
        for variant in family.variants() {
            let report =
                architecture_gradient_check(family, variant, 0).expect("architecture check runs");
            checks += 1;
            if report.max > worst.1 {
                worst = (format!("{family}/{variant}"), report.max);
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst.1 < GRAD_TOLERANCE && elapsed < GRAD_BUDGET,
        format!("{checks} checks, max relative error {:.2e} ({}) < {GRAD_TOLERANCE:e}, {elapsed:.1?} < {GRAD_BUDGET:?}", worst.1, worst.0),
    )
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_oracle(&brute_ranks(x), &brute_ranks(y))
}

fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut concordant, mut discordant, mut tied_x, mut tied_y, mut pairs) =
        (0i64, 0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            pairs += 1;
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx * dy > 0.0 {
                concordant += 1;
            } else if dx * dy < 0.0 {
                discordant += 1;
            }
        }
    }
    let denom = ((pairs - tied_x) as f64 * (pairs - tied_y) as f64).sqrt();
    (denom > 0.0).then(|| (concordant - discordant) as f64 / denom)
}

fn metrics_oracles() -> Outcome {
    let mut r = rng(0x6d65_7472);
    let mut worst = 0.0f64;
    let mut mismatched = Vec::new();
    for case in 0..METRIC_CASES {
        let n = r.gen_range(2..=METRIC_MAX_LEN);
        let levels = if case % 2 == 0 { r.gen_range(2..=5) } else { 0 };
        let draw = |r: &mut ChaCha8Rng| {
            if levels > 0 {
                r.gen_range(1..=levels) as f64
            } else {
                r.gen_range(-10.0..10.0)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let pairs: [(&str, Option<f64>, Option<f64>); 3] = [
            ("pearson", pearson(&x, &y).ok(), pearson_oracle(&x, &y)),
            ("spearman", spearman(&x, &y).ok(), spearman_oracle(&x, &y)),
            (
                "kendall",
                kendall_tau_b(&x, &y).ok(),
                kendall_oracle(&x, &y),
            ),
        ];
        for (name, got, want) in pairs {
            match (got, want) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => mismatched.push(format!("{name} case {case}: {got:?} vs {want:?}")),
            }
        }
    }
    Outcome::check(
        worst <= METRIC_TOLERANCE && mismatched.is_empty(),
        format!(
            "{METRIC_CASES} cases (half tie-heavy), max deviation {worst:.2e} <= {METRIC_TOLERANCE:e}, {} definedness mismatches",
            mismatched.len()
        ),
    )
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Midpoint rule on a quantile grid whose spacing divides every step of
/// both empirical quantile functions.
fn quantile_grid_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let g = a.len() * b.len() * 3;
    let q = |s: &[f64], u: f64| s[((u * s.len() as f64) as usize).min(s.len() - 1)];
    (0..g)
        .map(|k| (k as f64 + 0.5) / g as f64)
        .map(|u| (q(&a, u) - q(&b, u)).abs())
        .sum::<f64>()
        / g as f64
}

fn wasserstein_oracles() -> Outcome {
    let mut r = rng(0x7761_7373);
    let mut inexact = 0;
    let mut worst = 0.0f64;
    for case in 0..WASSERSTEIN_CASES {
        let integer = case % 3 == 0;
        let sample = |r: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if integer {
                        r.gen_range(1..=5) as f64
                    } else {
                        r.gen_range(-5.0..5.0)
                    }
                })
                .collect()
        };
        let n = r.gen_range(1..=60);
        let a = sample(&mut r, n);
        let b = sample(&mut r, n);
        let exact = sorted(&a)
            .iter()
            .zip(sorted(&b))
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n as f64;
        if wasserstein_1d(&a, &b).unwrap() != exact {
            inexact += 1;
        }
        let m = loop {
            let m = r.gen_range(1..=60);
            if m != n {
                break m;
            }
        };
        let c = sample(&mut r, m);
        worst = worst.max((wasserstein_1d(&a, &c).unwrap() - quantile_grid_oracle(&a, &c)).abs());
    }
    Outcome::check(
        inexact == 0 && worst < WASSERSTEIN_TOLERANCE,
        format!(
            "{WASSERSTEIN_CASES} cases: {inexact} inexact equal-size results, unequal-size max deviation {worst:.2e} < {WASSERSTEIN_TOLERANCE:e}"
        ),
    )
}

fn tone(f0: f64, harmonics: &[f64], seconds: f64) -> Waveform {
    let sr = 16_000u32;
    let n = (seconds * sr as f64) as usize;
    let norm: f64 = harmonics.iter().sum();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.5 * harmonics
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * f0 * t).sin())
                .sum::<f64>()
                / norm
        })
        .collect();
    Waveform::new(samples, sr).unwrap()
}

/// Worst relative F0 error over frames whose pitch window lies inside the signal.
fn interior_error(wave: &Waveform, f0: f64) -> f64 {
    let cfg = PitchConfig::default();
    let grid = FrameGrid::for_spectrogram(
        wave.len(),
        wave.sample_rate(),
        DEFAULT_FFT_SIZE,
        DEFAULT_HOP,
    );
    let track = estimate_f0(wave, &cfg, &grid).unwrap();
    let half = (cfg.frame_ms / 1000.0 * wave.sample_rate() as f64 / 2.0).ceil() as usize;
    let mut worst = 0.0f64;
    for i in 0..track.len() {
        let c = grid.center_sample(i);
        if c < half || c + half > wave.len() {
            continue;
        }
        let err = if track.voiced[i] {
            (track.f0[i] - f0).abs() / f0
        } else {
            f64::INFINITY
        };
        worst = worst.max(err);
    }
    worst
}

fn f0_accuracy() -> Outcome {
    let start = Instant::now();
    let (lo, hi) = F0_RANGE;
    let freqs: Vec<f64> = (0..F0_TONES)
        .map(|k| lo * (hi / lo).powf(k as f64 / (F0_TONES - 1) as f64))
        .collect();
    let mut r = rng(0x66_30);
    let mut worst = (0.0f64, String::new());
    for &f in &freqs {
        let pure = interior_error(&tone(f, &[1.0], 0.5), f);
        let amps: Vec<f64> = (1..=8).map(|k| r.gen_range(0.3..1.0) / k as f64).collect();
        let complex = interior_error(&tone(f, &amps, 0.5), f);
        for (kind, e) in [("pure", pure), ("harmonic", complex)] {
            if e > worst.0 {
                worst = (e, format!("{kind} {f:.1} Hz"));
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst.0 <= F0_TOLERANCE && elapsed < F0_BUDGET,
        format!(
            "{} pure tones and {} harmonic complexes in [{lo}, {hi}] Hz, worst interior error {:.3}% ({}) <= {}%, {elapsed:.1?} < {F0_BUDGET:?}",
            F0_TONES,
            F0_TONES,
            100.0 * worst.0,
            worst.1,
            100.0 * F0_TOLERANCE
        ),
    )
}

fn ids(manifest: &DatasetManifest) -> Vec<String> {
    manifest.utterances.iter().map(|u| u.id.clone()).collect()
}

fn overfit() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        utterances: OVERFIT_UTTERANCES,
        texts: OVERFIT_TEXTS,
        seed: 1,
        ..Default::default()
    };
    let manifest = generate_synthetic(&spec, dir.path()).unwrap();
    let texts: BTreeSet<&str> = manifest
        .ratings
        .iter()
        .map(|r| r.text_id.as_str())
        .collect();
    assert_eq!(
        texts.len(),
        OVERFIT_UTTERANCES,
        "overfit utterances must have distinct texts"
    );
    let all = ids(&manifest);
    let signal = SignalConfig::default();
    let start = Instant::now();
    let prosody = extract_all_prosody(&manifest, &signal).unwrap();
    let mut failures = Vec::new();
    let mut slowest = (Duration::ZERO, String::new());
    let mut runs = 0;
    for family in Family::ALL {
        for variant in family.variants() {
            let config = TrainConfig {
                family,
                variant,
                divisor: OVERFIT_DIVISOR,
                dropout: 0.0,
                learning_rate: OVERFIT_LEARNING_RATE,
                max_epochs: OVERFIT_EPOCHS,
                patience: OVERFIT_EPOCHS,
                target_mse: Some(OVERFIT_MSE),
                ..Default::default()
            };
            let t = Instant::now();
            let trained = train_from_manifest(
                &manifest,
                &all,
                &all,
                &config,
                &signal,
                Some(&prosody),
                &mut std::io::sink(),
            )
            .unwrap();
            runs += 1;
            let mse = trained.checkpoint.best_valid_mse;
            if t.elapsed() > slowest.0 {
                slowest = (t.elapsed(), format!("{family}/{variant}"));
            }
            if mse >= OVERFIT_MSE {
                failures.push(format!("{family}/{variant} {mse:.4}"));
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        failures.is_empty() && elapsed < OVERFIT_BUDGET,
        format!(
            "{runs} runs on {OVERFIT_UTTERANCES} utterances reach MSE < {OVERFIT_MSE} within {OVERFIT_EPOCHS} epochs except [{}]; {elapsed:.0?} < {OVERFIT_BUDGET:?} (slowest {} {:.0?})",
            failures.join(", "),
            slowest.1,
            slowest.0
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn held_out_srcc(
    manifest: &DatasetManifest,
    prosody: &ProsodyTable,
    split: (&[String], &[String], &[String]),
    variant: FeatureVariant,
    seed: u64,
) -> Option<f64> {
    let (train, valid, test) = split;
    let config = TrainConfig {
        family: Family::Mosnet,
        variant,
        divisor: LEARN_DIVISOR,
        max_epochs: LEARN_EPOCHS,
        patience: LEARN_PATIENCE,
        learning_rate: LEARN_LEARNING_RATE,
        seed,
        ..Default::default()
    };
    let signal = prosody.signal;
    let trained = train_from_manifest(
        manifest,
        train,
        valid,
        &config,
        &signal,
        Some(prosody),
        &mut std::io::sink(),
    )
    .unwrap();
    let preds = trained
        .checkpoint
        .predict(manifest, test, Some(prosody))
        .unwrap();
    let truths = utterance_truths(&manifest.ratings);
    let p: Vec<f64> = test.iter().map(|id| preds[id]).collect();
    let t: Vec<f64> = test.iter().map(|id| truths[id]).collect();
    spearman(&p, &t).ok()
}

fn learnability() -> Outcome {
    let spec = SyntheticSpec {
        utterances: LEARN_TRAIN + LEARN_TEST,
        beta: LEARN_BETA,
        seed: 11,
        ..Default::default()
    };
    let plan = plan_utterances(&spec).unwrap();
    let q: Vec<f64> = plan.iter().map(|u| u.quality).collect();
    let t: Vec<f64> = plan.iter().map(|u| u.truth).collect();
    let explained = pearson_oracle(&q, &t).unwrap().powi(2);

    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(&spec, dir.path()).unwrap();
    let prosody = extract_all_prosody(&manifest, &SignalConfig::default()).unwrap();
    let all = ids(&manifest);
    let (pool, test) = all.split_at(LEARN_TRAIN);
    let (valid, train) = pool.split_at(LEARN_VALID);
    let mut gains = Vec::new();
    let mut pairs = Vec::new();
    for seed in 0..LEARN_SEEDS {
        let base = held_out_srcc(
            &manifest,
            &prosody,
            (train, valid, test),
            FeatureVariant::None,
            seed,
        );
        let aware = held_out_srcc(
            &manifest,
            &prosody,
            (train, valid, test),
            FeatureVariant::ProsAlign,
            seed,
        );
        gains.push(aware.unwrap_or(0.0) - base.unwrap_or(0.0));
        let show =
            |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
        pairs.push(format!("{}->{}", show(base), show(aware)));
    }
    let gain = median(gains);
    let well_posed = (LEARN_EXPLAINED.0..=LEARN_EXPLAINED.1).contains(&explained);
    Outcome::check(
        well_posed && gain >= LEARN_MARGIN,
        format!(
            "prosody explains {:.0}% of truth variance; MOSNet held-out SRCC baseline->pros-align per seed [{}], median gain {gain:.3} >= {LEARN_MARGIN}",
            100.0 * explained,
            pairs.join(", ")
        ),
    )
}

/// Area between the two empirical CDFs.
fn cdf_distance(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let mut points: Vec<f64> = a.iter().chain(&b).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let cdf = |s: &[f64], x: f64| s.partition_point(|v| *v <= x) as f64 / s.len() as f64;
    points
        .windows(2)
        .map(|w| (cdf(&a, w[0]) - cdf(&b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

fn oracle_objective(records: &[RatingRecord], sets: [&BTreeSet<String>; 3]) -> f64 {
    let all: Vec<f64> = records.iter().map(|r| r.score).collect();
    sets.iter()
        .map(|set| {
            let s: Vec<f64> = records
                .iter()
                .filter(|r| set.contains(&r.utterance_id))
                .map(|r| r.score)
                .collect();
            if s.is_empty() {
                0.0
            } else {
                cdf_distance(&s, &all)
            }
        })
        .sum()
}

fn split_procedure() -> Outcome {
    let data = SyntheticSpec {
        utterances: SPLIT_RATINGS / 4,
        ratings_per_utterance: 4,
        listeners: 400,
        systems: 20,
        texts: 100,
        seed: 7,
        ..Default::default()
    };
    let records = synthetic_ratings(&data).unwrap();
    assert_eq!(records.len(), SPLIT_RATINGS);
    let locales = |us, gb, ca| {
        [
            ("US".to_string(), us),
            ("GB".to_string(), gb),
            ("CA".to_string(), ca),
        ]
        .into()
    };
    let spec = SplitSpec {
        valid_listeners: locales(2, 1, 1),
        test_listeners: locales(1, 1, 1),
        unseen_systems: 1,
        unseen_texts: 3,
        candidates: SPLIT_CANDIDATES,
        seed: 0,
        ..Default::default()
    };
    let start = Instant::now();
    let search = select_best_split(&records, &spec).unwrap();
    let elapsed = start.elapsed();
    let best = &search.best;
    let mut problems = Vec::new();

    let samples: BTreeSet<&str> = records.iter().map(|r| r.utterance_id.as_str()).collect();
    let n = samples.len() as f64;
    for (name, set, fraction) in [
        ("train", &best.train, spec.train_fraction),
        ("valid", &best.valid, spec.valid_fraction),
        ("test", &best.test, spec.test_fraction),
    ] {
        if (set.len() as f64 - fraction * n).abs() > 1.0 {
            problems.push(format!(
                "{name} has {} samples, target {:.1}",
                set.len(),
                fraction * n
            ));
        }
    }
    for s in &samples {
        let memberships = [&best.train, &best.valid, &best.test]
            .iter()
            .filter(|set| set.contains(*s))
            .count();
        if memberships != 1 {
            problems.push(format!("sample {s} is in {memberships} sets"));
        }
    }
    let touches = |u: &mosaware::datasplit::UnseenSet, r: &RatingRecord| {
        u.listeners.contains(&r.listener_id)
            || u.systems.contains(&r.system_id)
            || u.texts.contains(&r.text_id)
    };
    let claimed_by_valid: BTreeSet<&str> = records
        .iter()
        .filter(|r| touches(&best.unseen_valid, r))
        .map(|r| r.utterance_id.as_str())
        .collect();
    for r in &records {
        let id = &r.utterance_id;
        if touches(&best.unseen_valid, r) && !best.valid.contains(id) {
            problems.push(format!(
                "{id} touches an unseen validation category outside validation"
            ));
        }
        if touches(&best.unseen_test, r)
            && !best.test.contains(id)
            && !claimed_by_valid.contains(id.as_str())
        {
            problems.push(format!("{id} touches an unseen test category outside test"));
        }
    }
    if !best
        .unseen_valid
        .listeners
        .is_disjoint(&best.unseen_test.listeners)
        || !best
            .unseen_valid
            .systems
            .is_disjoint(&best.unseen_test.systems)
        || !best.unseen_valid.texts.is_disjoint(&best.unseen_test.texts)
    {
        problems.push("unseen sets overlap".into());
    }

    let best_oracle = oracle_objective(&records, [&best.train, &best.valid, &best.test]);
    if (best_oracle - best.objective()).abs() > 1e-9 {
        problems.push(format!(
            "reported objective {} vs oracle {best_oracle}",
            best.objective()
        ));
    }
    let mut feasible = 0;
    for k in 0..spec.candidates as u64 {
        if let Ok(c) = make_split_candidate(&records, &spec, spec.seed + k) {
            feasible += 1;
            let o = oracle_objective(&records, [&c.train, &c.valid, &c.test]);
            if o < best_oracle - 1e-12 {
                problems.push(format!("candidate {} has lower objective {o}", c.seed));
            }
        }
    }
    problems.truncate(5);
    Outcome::check(
        problems.is_empty() && feasible > 0 && elapsed < SPLIT_BUDGET,
        format!(
            "{SPLIT_RATINGS} ratings, {SPLIT_CANDIDATES} candidates ({feasible} feasible): seed {} objective {:.4} minimal, {} train / {} valid / {} test; {elapsed:.1?} < {SPLIT_BUDGET:?}; problems {problems:?}",
            best.seed,
            best_oracle,
            best.train.len(),
            best.valid.len(),
            best.test.len()
        ),
    )
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn pipeline(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let spec = SyntheticSpec {
        utterances: 60,
        listeners: 40,
        ratings_per_utterance: 2,
        seed: 21,
        ..Default::default()
    };
    let corpus = root.join("corpus");
    let manifest = generate_synthetic(&spec, &corpus).unwrap();
    let split_spec = SplitSpec {
        train_fraction: 0.5,
        valid_fraction: 0.25,
        test_fraction: 0.25,
        valid_listeners: [("US".to_string(), 1)].into(),
        test_listeners: [("US".to_string(), 1)].into(),
        unseen_systems: 1,
        unseen_texts: 1,
        candidates: 8,
        ..Default::default()
    };
    let search = select_best_split(&manifest.ratings, &split_spec).unwrap();
    write_split(&root.join("split"), &search).unwrap();
    let list = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>();
    let (train, valid, test) = (
        list(&search.best.train),
        list(&search.best.valid),
        list(&search.best.test),
    );
    let signal = SignalConfig::default();
    let prosody = extract_all_prosody(&manifest, &signal).unwrap();
    prosody.save(&root.join("prosody.json")).unwrap();
    let config = TrainConfig {
        variant: FeatureVariant::ProsAlign,
        divisor: 16,
        max_epochs: 3,
        seed: 4,
        ..Default::default()
    };
    let mut log = Vec::new();
    let trained = train_from_manifest(
        &manifest,
        &train,
        &valid,
        &config,
        &signal,
        Some(&prosody),
        &mut log,
    )
    .unwrap();
    trained.checkpoint.save(&root.join("ckpt")).unwrap();
    std::fs::write(root.join("ckpt/train.log"), &log).unwrap();
    let preds = trained
        .checkpoint
        .predict(&manifest, &test, Some(&prosody))
        .unwrap();
    let csv: String = preds.iter().map(|(k, v)| format!("{k},{v}\n")).collect();
    std::fs::write(root.join("preds.csv"), csv).unwrap();
    let truths: BTreeMap<String, f64> = utterance_truths(&manifest.ratings)
        .into_iter()
        .filter(|(k, _)| preds.contains_key(k))
        .collect();
    let report = evaluate(&preds, &truths, &utterance_systems(&manifest.ratings)).unwrap();
    std::fs::write(
        root.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .unwrap();
    files_under(root)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let second = pool.install(|| pipeline(b.path()));
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    let key = [
        "ckpt/params.ckpt",
        "ckpt/meta.json",
        "preds.csv",
        "report.json",
        "split/diagnostics.json",
    ];
    let present = key.iter().all(|k| first.contains_key(*k));
    Outcome::check(
        differing.is_empty() && present && first.len() == second.len(),
        format!(
            "{} files from two runs (1 and 3 worker threads) including checkpoint, predictions and report; {} differ {:?}",
            first.len(),
            differing.len(),
            differing.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn param_shape(store: &ParameterStore, name: &str) -> Vec<usize> {
    store
        .get(name)
        .map(|t| t.shape().to_vec())
        .unwrap_or_default()
}

fn structure() -> Outcome {
    let phones = Vocabulary::default_phones();
    let dims = ModelDims::new(257, phones.len(), LinguisticDims::default(), 10);
    let tags = dims.linguistic.tagset.len();
    let gru = |h: usize| 3 * h;
    let lstm = |h: usize| 4 * h;
    // (variant, expected (parameter, shape) pairs in the MOSNet feature encoder)
    let expected: ExpectedShapes = vec![
        (
            FeatureVariant::ProsAlign,
            vec![
                ("feature.embedding.table", vec![phones.len(), 64]),
                ("feature.ff.0.weight", vec![66, 128]),
                ("feature.rnn.fwd.w_hh", vec![128, gru(128)]),
            ],
        ),
        (
            FeatureVariant::EncOuts,
            vec![
                ("feature.rnn.fwd.w_ih", vec![768, lstm(256)]),
                ("feature.rnn.bwd.w_hh", vec![256, lstm(256)]),
            ],
        ),
        (
            FeatureVariant::PosTags,
            vec![
                ("feature.embedding.table", vec![tags, 256]),
                ("feature.ff.0.weight", vec![256, 256]),
                ("feature.rnn.fwd.w_hh", vec![256, gru(256)]),
            ],
        ),
        (
            FeatureVariant::SemUtt,
            vec![
                ("feature.ff.0.weight", vec![768, 512]),
                ("feature.ff.2.weight", vec![512, 256]),
            ],
        ),
        (
            FeatureVariant::SemW(TokenCombine::Last),
            vec![("feature.rnn.fwd.w_ih", vec![768, lstm(256)])],
        ),
        (
            FeatureVariant::SemW(TokenCombine::Cat4),
            vec![("feature.rnn.fwd.w_ih", vec![3072, lstm(256)])],
        ),
    ];
    let mut problems = Vec::new();
    for (variant, shapes) in &expected {
        let family = if *variant == FeatureVariant::ProsAlign {
            Family::Mosnet
        } else {
            Family::Ldnet
        };
        let config = ModelConfig::standard(family, *variant, &dims).unwrap();
        let mut store = ParameterStore::new(0);
        Model::build(&config, &mut store).unwrap();
        for (name, shape) in shapes {
            let got = param_shape(&store, name);
            if &got != shape {
                problems.push(format!("{variant} {name}: {got:?} != {shape:?}"));
            }
        }
        let enc = config.feature().unwrap();
        let want_cell = match variant {
            FeatureVariant::ProsAlign | FeatureVariant::PosTags => Some(CellKind::Gru),
            FeatureVariant::SemUtt => None,
            _ => Some(CellKind::Lstm),
        };
        if enc.recurrent.map(|r| r.0) != want_cell {
            problems.push(format!("{variant}: recurrent cell {:?}", enc.recurrent));
        }
    }
    let hidden = EmbeddingArray::new(13, 5, 768, vec![0.5; 13 * 5 * 768]).unwrap();
    let cat4 = combine_token_layers(&hidden, TokenCombine::Cat4).unwrap();
    if cat4.shape() != [5, 3072] {
        problems.push(format!("cat-4 token embedding shape {:?}", cat4.shape()));
    }
    Outcome::check(
        problems.is_empty(),
        format!(
            "pros 64/128/128 Bi-GRU, enc-outs 256 BLSTM, pos-tags 256/256/256 Bi-GRU, sem-utt 512/256, sem-w 256 BLSTM, cat-4 token width 3072; problems {problems:?}"
        ),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 9] = [
        ("1", "gradient suite", gradients),
        ("2", "metrics oracles", metrics_oracles),
        ("3", "wasserstein oracles", wasserstein_oracles),
        ("4", "f0 accuracy", f0_accuracy),
        ("5", "overfit capacity", overfit),
        ("6", "learnability separation", learnability),
        ("7", "split procedure", split_procedure),
        ("8", "determinism", determinism),
        ("9", "structural fidelity", structure),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        if !outcome.passed {
            failed += 1;
        }
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{id}] {name}: {} ({:.1?})",
            outcome.detail,
            start.elapsed()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
