//! Phoneme-level prosody (duration and F0), its propagation to spectrogram
//! frames, and ingestion of precomputed linguistic features.

mod alignment;
mod linguistic;
mod prosody;

pub use alignment::{parse_alignment, serialize_alignment, PhonemeAlignment, Segment};
pub use linguistic::{
    combine_token_layers, load_linguistic, parse_pos_tags, read_embedding, write_embedding,
    EmbeddingArray, LinguisticDims, LinguisticFeature, LinguisticKind, TokenCombine,
    EMBEDDING_MAGIC,
};
pub use prosody::{
    align_to_frames, phoneme_prosodic_features, FrameAlignedProsodic, ProsodicSequence, ZNormStats,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SILENCE: &str = "SIL";

const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

const UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

/// Ordered symbol list with index lookup, used for phone inventories and
/// POS tagsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid symbol {s:?}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate symbol {s}")));
            }
        }
        Ok(Vocabulary { symbols, index })
    }

    /// Silence followed by 39 ARPAbet phones.
    pub fn default_phones() -> Self {
        Self::new(std::iter::once(SILENCE).chain(ARPABET)).expect("static inventory")
    }

    /// The 17 universal POS tags.
    pub fn default_tags() -> Self {
        Self::new(UPOS).expect("static tagset")
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Vocabulary::new(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}
