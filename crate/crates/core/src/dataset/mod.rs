//! Ratings tables, dataset manifests and the synthetic corpus generator.

mod manifest;
mod ratings;
mod synthetic;

pub use manifest::{load_manifest, DatasetManifest, FeatureFile, UtteranceEntry, MANIFEST_FILE};
pub use ratings::{read_ratings, utterance_systems, utterance_truths, write_ratings, RatingRecord};
pub use synthetic::{
    generate_synthetic, plan_utterances, planted_quality, synthetic_ratings, PlantedProsody,
    SyntheticSpec, SyntheticUtterance, DURATION_STATS, SLOPE_STATS,
};
