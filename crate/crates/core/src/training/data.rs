use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{utterance_truths, DatasetManifest, FeatureFile, UtteranceEntry};
use crate::error::{Error, Result};
use crate::features::{
    align_to_frames, load_linguistic, parse_alignment, phoneme_prosodic_features,
    LinguisticFeature, LinguisticKind, ProsodicSequence, ZNormStats,
};
use crate::models::{FeaturePayload, FeatureVariant, ModelInput};
use crate::signal::{
    estimate_f0, interpolate_and_smooth, magnitude_spectrogram, read_wav, PitchConfig,
    DEFAULT_FFT_SIZE, DEFAULT_HOP,
};
use crate::tensor::Tensor;

/// Spectrogram and pitch-tracker settings shared by extraction and training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub pitch: PitchConfig,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            fft_size: DEFAULT_FFT_SIZE,
            hop: DEFAULT_HOP,
            pitch: PitchConfig::default(),
        }
    }
}

impl SignalConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Pitch contour and raw phone-level prosody of one utterance, plus the
/// phone index under every spectrogram frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceProsody {
    /// Interpolated and smoothed F0 per frame.
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub phones: ProsodicSequence,
    pub frame_phone: Vec<usize>,
}

/// Extracted prosody keyed by utterance id, with the settings used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTable {
    pub signal: SignalConfig,
    pub utterances: BTreeMap<String, UtteranceProsody>,
}

impl ProsodyTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::format("prosody table", e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }
}

fn load_spectrogram(
    manifest: &DatasetManifest,
    entry: &UtteranceEntry,
    signal: &SignalConfig,
) -> Result<crate::signal::Spectrogram> {
    let wave = read_wav(&manifest.resolve(&entry.audio))?;
    if wave.sample_rate() != manifest.sample_rate {
        return Err(Error::Manifest {
            location: entry.id.clone(),
            detail: format!(
                "audio at {} Hz, manifest declares {}",
                wave.sample_rate(),
                manifest.sample_rate
            ),
        });
    }
    magnitude_spectrogram(&wave, signal.fft_size, signal.hop)
}

pub fn extract_prosody(
    manifest: &DatasetManifest,
    entry: &UtteranceEntry,
    signal: &SignalConfig,
) -> Result<UtteranceProsody> {
    let wave = read_wav(&manifest.resolve(&entry.audio))?;
    let spec = magnitude_spectrogram(&wave, signal.fft_size, signal.hop)?;
    let grid = spec.grid();
    let raw = estimate_f0(&wave, &signal.pitch, &grid)?;
    let track = interpolate_and_smooth(&raw);
    let path = manifest.resolve(&entry.alignment);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let alignment = parse_alignment(&text, &manifest.phones)?;
    let phones =
        phoneme_prosodic_features(&track, &alignment).map_err(|e| context(&entry.id, e))?;
    let frames = align_to_frames(&phones, &alignment, &grid).map_err(|e| context(&entry.id, e))?;
    Ok(UtteranceProsody {
        f0: track.f0,
        voiced: track.voiced,
        phones,
        frame_phone: frames.source,
    })
}

fn context(id: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(d) => Error::InvalidArgument(format!("utterance {id}: {d}")),
        Error::Shape { context, detail } => Error::Shape {
            context: format!("utterance {id}: {context}"),
            detail,
        },
        other => other,
    }
}

/// Prosody for every utterance in the manifest, computed in parallel.
pub fn extract_all_prosody(
    manifest: &DatasetManifest,
    signal: &SignalConfig,
) -> Result<ProsodyTable> {
    let utterances = manifest
        .utterances
        .par_iter()
        .map(|u| Ok((u.id.clone(), extract_prosody(manifest, u, signal)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ProsodyTable {
        signal: *signal,
        utterances,
    })
}

/// Everything loaded for one utterance before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedUtterance {
    pub id: String,
    pub system_id: String,
    /// `[T, F]` log-magnitude spectrogram.
    pub spectrogram: Tensor,
    pub prosody: Option<UtteranceProsody>,
    pub linguistic: Option<LinguisticFeature>,
}

fn feature_file(kind: LinguisticKind) -> FeatureFile {
    match kind {
        LinguisticKind::PosTags => FeatureFile::PosTags,
        LinguisticKind::TokenEmbeddings(_) => FeatureFile::TokenHidden,
        LinguisticKind::UtteranceEmbedding => FeatureFile::UtteranceEmbedding,
        LinguisticKind::EncoderOutputs => FeatureFile::EncoderOutputs,
    }
}

/// Loads spectrograms and whatever `variant` needs for the listed utterances.
/// Prosody comes from `prosody` when given, otherwise it is extracted.
pub fn prepare_utterances(
    manifest: &DatasetManifest,
    ids: &[String],
    variant: FeatureVariant,
    signal: &SignalConfig,
    prosody: Option<&ProsodyTable>,
) -> Result<Vec<PreparedUtterance>> {
    if let Some(table) = prosody {
        if table.signal != *signal {
            return Err(Error::Config(
                "prosody table was extracted with different signal settings".into(),
            ));
        }
    }
    ids.par_iter()
        .map(|id| {
            let entry = manifest.utterance(id).ok_or_else(|| {
                Error::InvalidArgument(format!("utterance {id} is not in the manifest"))
            })?;
            let spec = load_spectrogram(manifest, entry, signal)?;
            let prosody = if variant.is_prosodic() {
                Some(match prosody {
                    Some(t) => {
                        t.utterances
                            .get(id)
                            .cloned()
                            .ok_or_else(|| Error::MissingFeature {
                                feature: "prosody".into(),
                                utterance: id.clone(),
                            })?
                    }
                    None => extract_prosody(manifest, entry, signal)?,
                })
            } else {
                None
            };
            if let Some(p) = &prosody {
                if p.frame_phone.len() != spec.frames {
                    return Err(Error::shape(
                        format!("utterance {id}"),
                        format!(
                            "{} prosody frames for {} spectrogram frames",
                            p.frame_phone.len(),
                            spec.frames
                        ),
                    ));
                }
            }
            let linguistic = match variant.linguistic_kind() {
                Some(kind) => {
                    let path = manifest.feature_path(entry, feature_file(kind))?;
                    Some(load_linguistic(kind, &path, &manifest.linguistic)?)
                }
                None => None,
            };
            Ok(PreparedUtterance {
                id: id.clone(),
                system_id: entry.system_id.clone(),
                spectrogram: spec.log_magnitude(),
                prosody,
                linguistic,
            })
        })
        .collect()
}

/// Z-normalization statistics over the phone-level prosody of `utterances`.
pub fn fit_znorm(utterances: &[PreparedUtterance]) -> Result<Option<ZNormStats>> {
    let seqs: Vec<&ProsodicSequence> = utterances
        .iter()
        .filter_map(|u| u.prosody.as_ref().map(|p| &p.phones))
        .collect();
    if seqs.is_empty() {
        return Ok(None);
    }
    ZNormStats::fit(seqs).map(Some)
}

/// Assembles the model input for `variant`, normalizing prosody with `znorm`.
pub fn model_input(
    u: &PreparedUtterance,
    variant: FeatureVariant,
    znorm: Option<&ZNormStats>,
) -> Result<ModelInput> {
    let missing = |what: &str| Error::MissingFeature {
        feature: what.into(),
        utterance: u.id.clone(),
    };
    let feature = match variant {
        FeatureVariant::None => None,
        FeatureVariant::ProsAlign | FeatureVariant::Prosodic => {
            let p = u.prosody.as_ref().ok_or_else(|| missing("prosody"))?;
            let stats = znorm.ok_or_else(|| {
                Error::Config("prosodic features need normalization statistics".into())
            })?;
            let seq = stats.normalize(&p.phones)?;
            Some(if variant == FeatureVariant::ProsAlign {
                let rows: Vec<f64> = p
                    .frame_phone
                    .iter()
                    .flat_map(|&k| [seq.f0[k], seq.duration[k]])
                    .collect();
                let ids = p.frame_phone.iter().map(|&k| seq.phone_ids[k]).collect();
                FeaturePayload::Prosodic {
                    phone_ids: ids,
                    values: Tensor::matrix(p.frame_phone.len(), 2, rows),
                }
            } else {
                FeaturePayload::from_prosodic(&seq)
            })
        }
        _ => Some(FeaturePayload::from_linguistic(
            u.linguistic
                .clone()
                .ok_or_else(|| missing(variant.name()))?,
        )),
    };
    Ok(ModelInput::new(u.spectrogram.clone(), feature))
}

/// Dense ids for the listeners rating the listed utterances: `1..=L` in
/// sorted order, leaving 0 for the mean listener.
pub fn listener_map(manifest: &DatasetManifest, ids: &[String]) -> BTreeMap<String, usize> {
    let wanted: std::collections::BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let listeners: std::collections::BTreeSet<&str> = manifest
        .ratings
        .iter()
        .filter(|r| wanted.contains(r.utterance_id.as_str()))
        .map(|r| r.listener_id.as_str())
        .collect();
    listeners
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l.to_string(), i + 1))
        .collect()
}

/// Per utterance, its ratings as (dense listener id, score).
pub type ListenerRatings = BTreeMap<String, Vec<(usize, f64)>>;

/// Training targets: the mean rating and the individual ratings of known
/// listeners for each utterance.
pub fn targets(
    manifest: &DatasetManifest,
    listeners: &BTreeMap<String, usize>,
) -> (BTreeMap<String, f64>, ListenerRatings) {
    let truths = utterance_truths(&manifest.ratings);
    let mut per = ListenerRatings::new();
    for r in &manifest.ratings {
        if let Some(&l) = listeners.get(&r.listener_id) {
            per.entry(r.utterance_id.clone())
                .or_default()
                .push((l, r.score));
        }
    }
    (truths, per)
}
