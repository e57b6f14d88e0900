use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_ratings, RatingRecord};
use crate::error::{Error, Result};
use crate::features::{LinguisticDims, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Precomputed per-utterance feature files a manifest may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFile {
    PosTags,
    /// Multi-layer token hidden states, reduced at load time.
    TokenHidden,
    UtteranceEmbedding,
    EncoderOutputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: String,
    pub system_id: String,
    pub text_id: String,
    pub audio: PathBuf,
    pub alignment: PathBuf,
    #[serde(default)]
    pub features: BTreeMap<FeatureFile, PathBuf>,
}

/// On-disk form; paths are relative to the manifest's directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestDocument {
    sample_rate: u32,
    phones: Vocabulary,
    linguistic: LinguisticDims,
    ratings: PathBuf,
    utterances: Vec<UtteranceEntry>,
}

/// A validated dataset: every file exists and every utterance is rated.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub sample_rate: u32,
    pub phones: Vocabulary,
    pub linguistic: LinguisticDims,
    pub ratings_file: PathBuf,
    pub utterances: Vec<UtteranceEntry>,
    pub ratings: Vec<RatingRecord>,
}

impl DatasetManifest {
    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn utterance(&self, id: &str) -> Option<&UtteranceEntry> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Number of utterances providing each feature file.
    pub fn availability(&self) -> BTreeMap<FeatureFile, usize> {
        let mut out = BTreeMap::new();
        for u in &self.utterances {
            for k in u.features.keys() {
                *out.entry(*k).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn feature_path(&self, utterance: &UtteranceEntry, kind: FeatureFile) -> Result<PathBuf> {
        utterance
            .features
            .get(&kind)
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::MissingFeature {
                feature: format!("{kind:?}"),
                utterance: utterance.id.clone(),
            })
    }

    /// Writes `manifest.json` (and nothing else) into `root`.
    pub fn save(&self) -> Result<PathBuf> {
        let doc = ManifestDocument {
            sample_rate: self.sample_rate,
            phones: self.phones.clone(),
            linguistic: self.linguistic.clone(),
            ratings: self.ratings_file.clone(),
            utterances: self.utterances.clone(),
        };
        let path = self.root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::format("manifest", e.to_string()))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn validate(&self) -> Result<()> {
        let err = |location: String, detail: String| Error::Manifest { location, detail };
        if self.sample_rate == 0 {
            return Err(err("sample_rate".into(), "must be positive".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            let loc = format!("utterances[{i}] ({})", u.id);
            if u.id.is_empty() || u.system_id.is_empty() || u.text_id.is_empty() {
                return Err(err(loc, "empty id".into()));
            }
            if index.insert(&u.id, 0).is_some() {
                return Err(err(loc, "duplicate utterance id".into()));
            }
            let files = [&u.audio, &u.alignment]
                .into_iter()
                .chain(u.features.values());
            for f in files {
                let path = self.resolve(f);
                if !path.is_file() {
                    return Err(err(loc, format!("missing file {}", path.display())));
                }
            }
        }
        for (i, r) in self.ratings.iter().enumerate() {
            let loc = format!("{} row {}", self.ratings_file.display(), i + 2);
            let Some(count) = index.get_mut(r.utterance_id.as_str()) else {
                return Err(err(
                    loc,
                    format!("rating for unknown utterance {}", r.utterance_id),
                ));
            };
            *count += 1;
            let u = self.utterance(&r.utterance_id).expect("indexed");
            if u.system_id != r.system_id || u.text_id != r.text_id {
                return Err(err(
                    loc,
                    format!("system/text ids disagree with utterance {}", u.id),
                ));
            }
            r.validate().map_err(|d| err(loc.clone(), d))?;
        }
        if let Some((id, _)) = index.iter().find(|(_, c)| **c == 0) {
            return Err(err(format!("utterance {id}"), "has no ratings".into()));
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDocument = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        location: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let ratings_path = root.join(&doc.ratings);
    if !ratings_path.is_file() {
        return Err(Error::Manifest {
            location: "ratings".into(),
            detail: format!("missing file {}", ratings_path.display()),
        });
    }
    let manifest = DatasetManifest {
        ratings: read_ratings(&ratings_path)?,
        root,
        sample_rate: doc.sample_rate,
        phones: doc.phones,
        linguistic: doc.linguistic,
        ratings_file: doc.ratings,
        utterances: doc.utterances,
    };
    manifest.validate()?;
    Ok(manifest)
}
