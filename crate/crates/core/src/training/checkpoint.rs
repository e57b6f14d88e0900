use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{
    fit_znorm, listener_map, model_input, prepare_utterances, targets, ProsodyTable, SignalConfig,
};
use super::{predict_scores, train_model, EpochRecord, TrainConfig, TrainExample};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::features::ZNormStats;
use crate::models::{Model, ModelConfig, ModelDims};
use crate::tensor::ParameterStore;
use crate::util;

pub const PARAMS_FILE: &str = "params.ckpt";
pub const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    signal: SignalConfig,
    znorm: Option<ZNormStats>,
    listeners: BTreeMap<String, usize>,
    best_epoch: usize,
    best_valid_mse: f64,
}

/// Trained parameters with everything needed to rebuild the model and
/// reproduce its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub signal: SignalConfig,
    pub znorm: Option<ZNormStats>,
    pub listeners: BTreeMap<String, usize>,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    pub store: ParameterStore,
}

impl Checkpoint {
    /// Writes `params.ckpt` and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join(PARAMS_FILE))?;
        let meta = CheckpointMeta {
            model: self.model.clone(),
            train: self.train.clone(),
            signal: self.signal,
            znorm: self.znorm,
            listeners: self.listeners.clone(),
            best_epoch: self.best_epoch,
            best_valid_mse: self.best_valid_mse,
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::format("checkpoint metadata", e.to_string()))?;
        let path = dir.join(META_FILE);
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let ckpt = Checkpoint {
            model: meta.model,
            train: meta.train,
            signal: meta.signal,
            znorm: meta.znorm,
            listeners: meta.listeners,
            best_epoch: meta.best_epoch,
            best_valid_mse: meta.best_valid_mse,
            store: ParameterStore::load(&dir.join(PARAMS_FILE))?,
        };
        ckpt.build_model()?;
        Ok(ckpt)
    }

    /// Rebuilds the model and checks the stored parameters fit it.
    pub fn build_model(&self) -> Result<Model> {
        let mut fresh = ParameterStore::new(0);
        let model = Model::build(&self.model, &mut fresh)?;
        let expected: Vec<(&str, &[usize])> = fresh.iter().map(|(n, t)| (n, t.shape())).collect();
        let found: Vec<(&str, &[usize])> = self.store.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != found {
            return Err(Error::format(
                "checkpoint",
                "parameters do not match the model configuration",
            ));
        }
        Ok(model)
    }

    /// Listener-independent scores in `[1, 5]` for the listed utterances.
    pub fn predict(
        &self,
        manifest: &DatasetManifest,
        ids: &[String],
        prosody: Option<&ProsodyTable>,
    ) -> Result<BTreeMap<String, f64>> {
        let model = self.build_model()?;
        let variant = self.model.variant();
        let prepared = prepare_utterances(manifest, ids, variant, &self.signal, prosody)?;
        let inputs = prepared
            .iter()
            .map(|u| model_input(u, variant, self.znorm.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let scores = predict_scores(&model, &self.store, &inputs)?;
        Ok(ids.iter().cloned().zip(scores).collect())
    }
}

/// A checkpoint and the per-epoch history that produced it.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Prepares inputs from `manifest`, fits prosody normalization on the
/// training utterances, and trains with early stopping on `valid_ids`.
pub fn train_from_manifest(
    manifest: &DatasetManifest,
    train_ids: &[String],
    valid_ids: &[String],
    config: &TrainConfig,
    signal: &SignalConfig,
    prosody: Option<&ProsodyTable>,
    log: &mut dyn Write,
) -> Result<TrainedModel> {
    config.validate()?;
    let variant = config.variant;
    let train_prep = prepare_utterances(manifest, train_ids, variant, signal, prosody)?;
    let valid_prep = prepare_utterances(manifest, valid_ids, variant, signal, prosody)?;
    let znorm = fit_znorm(&train_prep)?;
    let listeners = listener_map(manifest, train_ids);
    let (truths, ratings) = targets(manifest, &listeners);
    let examples = |prep: &[crate::training::PreparedUtterance]| -> Result<Vec<TrainExample>> {
        prep.iter()
            .map(|u| {
                Ok(TrainExample {
                    id: u.id.clone(),
                    input: model_input(u, variant, znorm.as_ref())?,
                    target: truths[&u.id],
                    ratings: ratings.get(&u.id).cloned().unwrap_or_default(),
                })
            })
            .collect()
    };
    let train = examples(&train_prep)?;
    let valid = examples(&valid_prep)?;

    let mut dims = ModelDims::new(
        signal.bins(),
        manifest.phones.len(),
        manifest.linguistic.clone(),
        listeners.len(),
    );
    dims.divisor = config.divisor;
    dims.dropout = config.dropout;
    dims.backbone_seed = util::mix_seed(&[config.seed, 0xbb]);
    let model_config = ModelConfig::standard(config.family, variant, &dims)?;
    let outcome = train_model(&model_config, config, &train, &valid, log)?;
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            model: model_config,
            train: config.clone(),
            signal: *signal,
            znorm,
            listeners,
            best_epoch: outcome.best_epoch,
            best_valid_mse: outcome.best_valid_mse,
            store: outcome.store,
        },
        history: outcome.history,
    })
}

/// Predictions for every utterance in `ids`, or every manifest utterance when `ids` is empty.
pub fn predict_manifest(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    ids: &[String],
    prosody: Option<&ProsodyTable>,
) -> Result<BTreeMap<String, f64>> {
    let all: Vec<String>;
    let ids = if ids.is_empty() {
        all = manifest.utterances.iter().map(|u| u.id.clone()).collect();
        &all
    } else {
        ids
    };
    checkpoint.predict(manifest, ids, prosody)
}
