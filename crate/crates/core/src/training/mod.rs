//! Losses, the early-stopping training loop, checkpoints and prediction.

mod checkpoint;
mod data;

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    predict_manifest, train_from_manifest, Checkpoint, TrainedModel, META_FILE, PARAMS_FILE,
};
pub use data::{
    extract_all_prosody, extract_prosody, fit_znorm, listener_map, model_input, prepare_utterances,
    targets, ListenerRatings, PreparedUtterance, ProsodyTable, SignalConfig, UtteranceProsody,
};

use crate::error::{Error, Result};
use crate::metrics::{mse, pearson};
use crate::models::{Family, FeatureVariant, Model, ModelConfig, ModelInput, MEAN_LISTENER};
use crate::tensor::{adam_step, AdamState, Graph, Mode, ParameterStore, Tensor, Var};
use crate::util;

/// `(u − y)² + α · mean_t (f_t − y)²`; the frame term is skipped when
/// `frames` is `None`.
pub fn compute_loss(
    g: &mut Graph,
    frames: Option<Var>,
    utterance: Var,
    target: f64,
    alpha: f64,
) -> Result<Var> {
    let y = g.constant(Tensor::full(g.shape(utterance), target));
    let d = g.sub(utterance, y)?;
    let sq = g.mul(d, d)?;
    let mut loss = g.sum(sq);
    if let Some(f) = frames {
        if alpha != 0.0 {
            let y = g.constant(Tensor::full(g.shape(f), target));
            let d = g.sub(f, y)?;
            let sq = g.mul(d, d)?;
            let m = g.mean(sq);
            let term = g.scale(m, alpha);
            loss = g.add(loss, term)?;
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(alias = "model")]
    pub family: Family,
    #[serde(alias = "feature")]
    pub variant: FeatureVariant,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Weight of the frame-level loss term.
    pub alpha: f64,
    pub seed: u64,
    /// Divides every hidden width of the reference architecture.
    pub divisor: usize,
    pub dropout: f64,
    /// Stop as soon as validation MSE falls below this value.
    pub target_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            family: Family::Mosnet,
            variant: FeatureVariant::None,
            batch_size: 4,
            max_epochs: 100,
            patience: 10,
            learning_rate: 1e-3,
            alpha: 1.0,
            seed: 0,
            divisor: 1,
            dropout: 0.3,
            target_mse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha = {} must be finite and non-negative",
                self.alpha
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.divisor == 0 {
            return Err(Error::Config("divisor must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One training utterance: its input, mean score and individual ratings
/// (dense listener id, score).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub input: ModelInput,
    pub target: f64,
    pub ratings: Vec<(usize, f64)>,
}

/// Loss of one example. LDNet averages the mean-listener loss with the
/// mean loss over the utterance's individual ratings, sharing one encoder pass.
pub fn example_loss(
    g: &mut Graph,
    model: &Model,
    store: &ParameterStore,
    ex: &TrainExample,
    alpha: f64,
) -> Result<Var> {
    match model {
        Model::Ldnet(ld) => {
            let enc = ld.encode(g, store, &ex.input)?;
            let out = ld.decode(g, store, &enc, MEAN_LISTENER)?;
            let mean_loss = compute_loss(g, out.frames, out.utterance, ex.target, alpha)?;
            if ex.ratings.is_empty() {
                return Ok(mean_loss);
            }
            let mut acc: Option<Var> = None;
            for &(listener, score) in &ex.ratings {
                let out = ld.decode(g, store, &enc, listener)?;
                let l = compute_loss(g, out.frames, out.utterance, score, alpha)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, l)?,
                    None => l,
                });
            }
            let listener_loss = g.scale(
                acc.expect("non-empty ratings"),
                1.0 / ex.ratings.len() as f64,
            );
            let total = g.add(mean_loss, listener_loss)?;
            Ok(g.scale(total, 0.5))
        }
        Model::Ssl(_) => {
            let out = model.forward(g, store, &ex.input)?;
            compute_loss(g, None, out.utterance, ex.target, alpha)
        }
        Model::Mosnet(_) => {
            let out = model.forward(g, store, &ex.input)?;
            compute_loss(g, out.frames, out.utterance, ex.target, alpha)
        }
    }
}

/// Per-epoch log entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mse: f64,
    pub valid_lcc: Option<f64>,
}

impl EpochRecord {
    /// `epoch<TAB>train loss<TAB>valid MSE<TAB>valid LCC`.
    pub fn log_line(&self) -> String {
        let lcc = self
            .valid_lcc
            .map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{}",
            self.epoch, self.train_loss, self.valid_mse, lcc
        )
    }
}

/// Owns a model, its parameters and optimiser state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub store: ParameterStore,
    pub config: TrainConfig,
    adam: AdamState,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(util::mix_seed(&[config.seed, 0x1417]));
        let model = Model::build(model_config, &mut store)?;
        let adam = AdamState::new(config.learning_rate);
        Ok(Trainer {
            model,
            store,
            config,
            adam,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One Adam update on the mean loss of `batch`; returns that loss.
    pub fn step(&mut self, batch: &[&TrainExample], dropout_seed: u64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut g = Graph::new(Mode::Train, dropout_seed);
        let mut total: Option<Var> = None;
        for ex in batch {
            let l = example_loss(&mut g, &self.model, &self.store, ex, self.config.alpha)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epochs_done + 1,
                detail: format!("batch loss {value}"),
            });
        }
        let grads = g.backward(loss, &Tensor::full(g.shape(loss), 1.0))?;
        let mut grads = grads.into_params();
        for (name, p) in self.store.iter() {
            grads
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
        }
        if let Some((name, _)) = grads.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.epochs_done + 1,
                detail: format!("non-finite gradient for {name}"),
            });
        }
        adam_step(&mut self.store, &grads, &mut self.adam)?;
        Ok(value)
    }

    /// One pass over `train` in a seeded random order; returns the mean batch loss.
    pub fn epoch(&mut self, train: &[TrainExample]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let epoch = self.epochs_done as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut util::rng(util::mix_seed(&[
            self.config.seed,
            0x5ff1e,
            epoch,
        ])));
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += self.step(
                &batch,
                util::mix_seed(&[self.config.seed, 0xd40, epoch, b as u64]),
            )?;
            batches += 1;
        }
        self.epochs_done += 1;
        Ok(sum / batches as f64)
    }
}

/// Listener-independent predictions clipped to `[1, 5]`.
pub fn predict_scores(
    model: &Model,
    store: &ParameterStore,
    inputs: &[ModelInput],
) -> Result<Vec<f64>> {
    inputs
        .par_iter()
        .map(|x| {
            let mut g = Graph::untracked(Mode::Eval, 0);
            let out = model.forward(&mut g, store, x)?;
            let v = g.value(out.utterance).data()[0];
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "prediction".into(),
                });
            }
            Ok(v.clamp(1.0, 5.0))
        })
        .collect()
}

/// Result of [`train_model`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub store: ParameterStore,
    pub model: Model,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains until validation MSE has not improved for `patience` epochs, the
/// epoch budget runs out or `target_mse` is reached. Each epoch is logged
/// to `log`.
pub fn train_model(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train: &[TrainExample],
    valid: &[TrainExample],
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut trainer = Trainer::new(model_config, config.clone())?;
    let mean_target = train.iter().map(|e| e.target).sum::<f64>() / train.len() as f64;
    let bias = trainer.model.output_bias();
    trainer.store.get_mut(bias)?.data_mut()[0] = mean_target;
    let valid_inputs: Vec<ModelInput> = valid.iter().map(|e| e.input.clone()).collect();
    let valid_targets: Vec<f64> = valid.iter().map(|e| e.target).collect();
    let mut best: Option<(usize, f64, ParameterStore)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    while trainer.epochs_done() < config.max_epochs {
        let train_loss = trainer.epoch(train)?;
        let preds = predict_scores(&trainer.model, &trainer.store, &valid_inputs)?;
        let record = EpochRecord {
            epoch: trainer.epochs_done(),
            train_loss,
            valid_mse: mse(&preds, &valid_targets)?,
            valid_lcc: pearson(&preds, &valid_targets).ok(),
        };
        writeln!(log, "{}", record.log_line()).map_err(|e| Error::io("training log", e))?;
        let improved = best.as_ref().is_none_or(|b| record.valid_mse < b.1);
        if improved {
            best = Some((record.epoch, record.valid_mse, trainer.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let reached = config.target_mse.is_some_and(|t| record.valid_mse < t);
        history.push(record);
        if reached || since_best > config.patience {
            break;
        }
    }
    let (best_epoch, best_valid_mse, store) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        store,
        model: trainer.model,
        best_epoch,
        best_valid_mse,
        history,
    })
}

#[cfg(test)]
mod tests;
