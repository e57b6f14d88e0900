use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::features::{LinguisticDims, Vocabulary};
use crate::models::{FeaturePayload, ModelDims};

const BINS: usize = 12;

fn dims(listeners: usize) -> ModelDims {
    let linguistic = LinguisticDims {
        tagset: Vocabulary::new(["A", "B", "C"]).unwrap(),
        token_dim: 3,
        utterance_dim: 4,
        encoder_dim: 3,
    };
    ModelDims {
        divisor: 32,
        dropout: 0.3,
        backbone_seed: 1,
        ..ModelDims::new(BINS, 5, linguistic, listeners)
    }
}

fn examples(n: usize, variant: FeatureVariant, seed: u64) -> Vec<TrainExample> {
    let mut rng = util::rng(seed);
    (0..n)
        .map(|i| {
            let t = rng.gen_range(4..8);
            let spec = Tensor::matrix(
                t,
                BINS,
                (0..t * BINS).map(|_| rng.gen_range(0.0..2.0)).collect(),
            );
            let feature = match variant {
                FeatureVariant::None => None,
                FeatureVariant::ProsAlign => Some(FeaturePayload::Prosodic {
                    phone_ids: (0..t).map(|_| rng.gen_range(0..5)).collect(),
                    values: Tensor::matrix(
                        t,
                        2,
                        (0..2 * t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    ),
                }),
                FeatureVariant::SemUtt => Some(FeaturePayload::Vector(Tensor::matrix(
                    1,
                    4,
                    (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ))),
                other => panic!("unused variant {other}"),
            };
            TrainExample {
                id: format!("u{i}"),
                input: ModelInput::new(spec, feature),
                target: rng.gen_range(1.0..5.0),
                ratings: (0..3)
                    .map(|_| (rng.gen_range(1..=4), rng.gen_range(1..=5) as f64))
                    .collect(),
            }
        })
        .collect()
}

fn config(family: Family, variant: FeatureVariant, seed: u64) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig::standard(family, variant, &dims(4)).unwrap();
    let train = TrainConfig {
        family,
        variant,
        seed,
        divisor: 32,
        batch_size: 2,
        max_epochs: 20,
        patience: 3,
        ..Default::default()
    };
    (model, train)
}

fn loss_oracle(frames: Option<&[f64]>, utt: f64, target: f64, alpha: f64) -> f64 {
    let frame_term = frames.map_or(0.0, |f| {
        f.iter().map(|v| (v - target).powi(2)).sum::<f64>() / f.len() as f64
    });
    (utt - target).powi(2) + alpha * frame_term
}

fn eval_loss(frames: Option<Vec<f64>>, utt: f64, target: f64, alpha: f64) -> f64 {
    let mut g = Graph::new(Mode::Eval, 0);
    let u = g.constant(Tensor::matrix(1, 1, vec![utt]));
    let f = frames.map(|f| g.constant(Tensor::matrix(f.len(), 1, f)));
    let l = compute_loss(&mut g, f, u, target, alpha).unwrap();
    g.value(l).data()[0]
}

#[test]
fn loss_examples() {
    assert_eq!(eval_loss(Some(vec![3.0; 4]), 3.0, 3.0, 1.0), 0.0);
    assert_eq!(eval_loss(Some(vec![2.0; 4]), 3.0, 2.0, 1.0), 1.0);
    assert_eq!(eval_loss(None, 4.5, 2.0, 1.0), 6.25);
    let mut rng = util::rng(3);
    for _ in 0..50 {
        let f: Vec<f64> = (0..rng.gen_range(1..20))
            .map(|_| rng.gen_range(0.0..6.0))
            .collect();
        let (u, y, a) = (
            rng.gen_range(0.0..6.0),
            rng.gen_range(1.0..5.0),
            rng.gen_range(0.0..3.0),
        );
        let got = eval_loss(Some(f.clone()), u, y, a);
        assert!((got - loss_oracle(Some(&f), u, y, a)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn loss_non_negative_and_zero_only_at_target(
        f in prop::collection::vec(1.0f64..5.0, 1..10), u in 1.0f64..5.0, y in 1.0f64..5.0,
    ) {
        let l = eval_loss(Some(f.clone()), u, y, 1.0);
        prop_assert!(l >= 0.0);
        let exact = u == y && f.iter().all(|&v| v == y);
        prop_assert_eq!(l == 0.0, exact);
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
        TrainConfig {
            alpha: -1.0,
            ..Default::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        },
        TrainConfig {
            dropout: 1.0,
            ..Default::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    let json = serde_json::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(
        serde_json::from_str::<TrainConfig>(&json).unwrap(),
        TrainConfig::default()
    );
    let partial: TrainConfig =
        serde_json::from_str(r#"{"family":"ldnet","variant":"sem-w-cat4"}"#).unwrap();
    assert_eq!(
        partial.variant,
        FeatureVariant::SemW(crate::features::TokenCombine::Cat4)
    );
}

#[test]
fn single_adam_step_decreases_example_loss() {
    for (family, variant) in [
        (Family::Mosnet, FeatureVariant::None),
        (Family::Mosnet, FeatureVariant::ProsAlign),
        (Family::Ldnet, FeatureVariant::SemUtt),
        (Family::Ssl, FeatureVariant::None),
    ] {
        for seed in 0..10 {
            let (model_cfg, mut cfg) = config(family, variant, seed);
            cfg.learning_rate = 1e-4;
            let mut trainer = Trainer::new(&model_cfg, cfg).unwrap();
            let ex = &examples(1, variant, seed + 50)[0];
            let loss_at = |t: &Trainer| {
                let mut g = Graph::new(Mode::Train, 77);
                let l = example_loss(&mut g, &t.model, &t.store, ex, 1.0).unwrap();
                g.value(l).data()[0]
            };
            let before = loss_at(&trainer);
            trainer.step(&[ex], 77).unwrap();
            let after = loss_at(&trainer);
            assert!(
                after < before,
                "{family}/{variant} seed {seed}: {before} -> {after}"
            );
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (model_cfg, cfg) = config(Family::Ldnet, FeatureVariant::SemUtt, 4);
    let train = examples(6, FeatureVariant::SemUtt, 1);
    let valid = examples(3, FeatureVariant::SemUtt, 2);
    let run = || {
        let mut log = Vec::new();
        let out = train_model(&model_cfg, &cfg, &train, &valid, &mut log).unwrap();
        (out.store.to_bytes(), log)
    };
    assert_eq!(run(), run());
    let (_, other) = {
        let cfg = TrainConfig {
            seed: 5,
            ..cfg.clone()
        };
        let mut log = Vec::new();
        let out = train_model(&model_cfg, &cfg, &train, &valid, &mut log).unwrap();
        (out.store.to_bytes(), log)
    };
    assert_ne!(run().1, other);
}

#[test]
fn patience_zero_stops_one_epoch_past_best() {
    for seed in 0..4 {
        let (model_cfg, mut cfg) = config(Family::Mosnet, FeatureVariant::None, seed);
        cfg.patience = 0;
        cfg.max_epochs = 200;
        cfg.learning_rate = 0.05;
        let train = examples(4, FeatureVariant::None, seed);
        let valid = examples(3, FeatureVariant::None, seed + 9);
        let out = train_model(&model_cfg, &cfg, &train, &valid, &mut std::io::sink()).unwrap();
        assert!(out.history.len() < 200);
        assert_eq!(out.history.len(), out.best_epoch + 1);
        let last = out.history.last().unwrap();
        assert!(last.valid_mse >= out.best_valid_mse);
    }
}

#[test]
fn early_stopping_returns_best_epoch_parameters() {
    let (model_cfg, mut cfg) = config(Family::Mosnet, FeatureVariant::None, 2);
    cfg.patience = 4;
    cfg.learning_rate = 0.05;
    cfg.max_epochs = 60;
    let train = examples(4, FeatureVariant::None, 3);
    let valid = examples(4, FeatureVariant::None, 4);
    let mut log = Vec::new();
    let out = train_model(&model_cfg, &cfg, &train, &valid, &mut log).unwrap();
    let best = out
        .history
        .iter()
        .map(|r| r.valid_mse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_valid_mse, best);
    let inputs: Vec<ModelInput> = valid.iter().map(|e| e.input.clone()).collect();
    let preds = predict_scores(&out.model, &out.store, &inputs).unwrap();
    let targets: Vec<f64> = valid.iter().map(|e| e.target).collect();
    assert_eq!(mse(&preds, &targets).unwrap(), best);

    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), out.history.len());
    for (line, rec) in text.lines().zip(&out.history) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0].parse::<usize>().unwrap(), rec.epoch);
    }
}

#[test]
fn predictions_clipped_on_fuzzed_models() {
    for family in Family::ALL {
        let (model_cfg, _) = config(family, FeatureVariant::None, 0);
        let mut store = ParameterStore::new(0);
        let model = Model::build(&model_cfg, &mut store).unwrap();
        for seed in 0..5 {
            store.randomize(seed, 3.0);
            let inputs: Vec<ModelInput> = examples(6, FeatureVariant::None, seed)
                .into_iter()
                .map(|e| e.input)
                .collect();
            let preds = predict_scores(&model, &store, &inputs).unwrap();
            assert_eq!(preds.len(), 6);
            assert!(
                preds.iter().all(|p| (1.0..=5.0).contains(p)),
                "{family}: {preds:?}"
            );
        }
    }
}

#[test]
fn divergence_is_reported() {
    let (model_cfg, cfg) = config(Family::Ssl, FeatureVariant::None, 0);
    let mut trainer = Trainer::new(&model_cfg, cfg).unwrap();
    let mut ex = examples(1, FeatureVariant::None, 0).remove(0);
    ex.target = f64::NAN;
    assert!(matches!(
        trainer.step(&[&ex], 0),
        Err(Error::Diverged { epoch: 1, .. })
    ));
}
