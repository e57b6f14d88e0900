use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Raw contents of an EMB1 file: `layers × rows × cols` f32 values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingArray {
    pub layers: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl EmbeddingArray {
    pub fn new(layers: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 || rows == 0 || cols == 0 {
            return Err(Error::format(
                "embedding",
                format!("zero dimension in {layers}x{rows}x{cols}"),
            ));
        }
        if data.len() != layers * rows * cols {
            return Err(Error::format(
                "embedding",
                format!("{} values for {layers}x{rows}x{cols}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("embedding", "non-finite value"));
        }
        Ok(EmbeddingArray {
            layers,
            rows,
            cols,
            data,
        })
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[l * n..(l + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        for d in [self.rows, self.cols, self.layers] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::format("embedding", "missing EMB1 header"));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (rows, cols, layers) = (word(0), word(1), word(2));
        let count = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(layers))
            .ok_or_else(|| Error::format("embedding", "dimension overflow"))?;
        if bytes.len() - 16 != count * 4 {
            return Err(Error::format(
                "embedding",
                format!(
                    "header declares {count} values but payload holds {} bytes",
                    bytes.len() - 16
                ),
            ));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(layers, rows, cols, data)
    }

    fn matrix(&self, layer: usize) -> Tensor {
        Tensor::matrix(
            self.rows,
            self.cols,
            self.layer(layer).iter().map(|&v| v as f64).collect(),
        )
    }
}

pub fn write_embedding(path: &Path, array: &EmbeddingArray) -> Result<()> {
    std::fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: &Path) -> Result<EmbeddingArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingArray::from_bytes(&bytes).map_err(|e| match e {
        Error::Format { what, detail } => Error::Format {
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// How per-layer token hidden states are reduced to one matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenCombine {
    Last,
    Sum4,
    Cat4,
}

impl TokenCombine {
    pub fn output_dim(self, dim: usize) -> usize {
        match self {
            TokenCombine::Cat4 => 4 * dim,
            _ => dim,
        }
    }
}

/// Reduces `L × T × D` hidden states: the last layer, the sum of the last
/// four, or the last four concatenated along the feature axis.
pub fn combine_token_layers(hidden: &EmbeddingArray, mode: TokenCombine) -> Result<Tensor> {
    let (l, t, d) = (hidden.layers, hidden.rows, hidden.cols);
    if mode != TokenCombine::Last && l < 4 {
        return Err(Error::InvalidArgument(format!(
            "{mode:?} needs at least 4 layers, found {l}"
        )));
    }
    Ok(match mode {
        TokenCombine::Last => hidden.matrix(l - 1),
        TokenCombine::Sum4 => {
            let mut acc = vec![0.0; t * d];
            for layer in l - 4..l {
                for (a, &v) in acc.iter_mut().zip(hidden.layer(layer)) {
                    *a += v as f64;
                }
            }
            Tensor::matrix(t, d, acc)
        }
        TokenCombine::Cat4 => {
            let mut out = Vec::with_capacity(t * 4 * d);
            for row in 0..t {
                for layer in l - 4..l {
                    out.extend(
                        hidden.layer(layer)[row * d..(row + 1) * d]
                            .iter()
                            .map(|&v| v as f64),
                    );
                }
            }
            Tensor::matrix(t, 4 * d, out)
        }
    })
}

/// One tag per word, whitespace-separated.
pub fn parse_pos_tags(text: &str, tagset: &Vocabulary) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for (n, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            ids.push(tagset.id(tok).ok_or_else(|| Error::Parse {
                line: n + 1,
                detail: format!("unknown tag {tok}"),
            })?);
        }
    }
    if ids.is_empty() {
        return Err(Error::Parse {
            line: 0,
            detail: "no tags".into(),
        });
    }
    Ok(ids)
}

/// Feature families ingested from precomputed files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "combine")]
pub enum LinguisticKind {
    PosTags,
    TokenEmbeddings(TokenCombine),
    UtteranceEmbedding,
    EncoderOutputs,
}

/// Declared dimensions for each linguistic feature family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinguisticDims {
    pub tagset: Vocabulary,
    pub token_dim: usize,
    pub utterance_dim: usize,
    pub encoder_dim: usize,
}

impl Default for LinguisticDims {
    fn default() -> Self {
        LinguisticDims {
            tagset: Vocabulary::default_tags(),
            token_dim: 768,
            utterance_dim: 768,
            encoder_dim: 768,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LinguisticFeature {
    PosTags {
        ids: Vec<usize>,
        tagset_size: usize,
    },
    /// `[T, D]` or `[T, 4D]` for concatenated layers.
    TokenEmbeddings {
        values: Tensor,
        combine: TokenCombine,
    },
    UtteranceEmbedding {
        values: Vec<f64>,
    },
    /// `[T, D]` text-encoder outputs.
    EncoderOutputs {
        values: Tensor,
    },
}

impl LinguisticFeature {
    pub fn kind(&self) -> LinguisticKind {
        match self {
            LinguisticFeature::PosTags { .. } => LinguisticKind::PosTags,
            LinguisticFeature::TokenEmbeddings { combine, .. } => {
                LinguisticKind::TokenEmbeddings(*combine)
            }
            LinguisticFeature::UtteranceEmbedding { .. } => LinguisticKind::UtteranceEmbedding,
            LinguisticFeature::EncoderOutputs { .. } => LinguisticKind::EncoderOutputs,
        }
    }

    /// Feature width seen by an encoder.
    pub fn dim(&self) -> usize {
        match self {
            LinguisticFeature::PosTags { tagset_size, .. } => *tagset_size,
            LinguisticFeature::TokenEmbeddings { values, .. }
            | LinguisticFeature::EncoderOutputs { values } => values.shape()[1],
            LinguisticFeature::UtteranceEmbedding { values } => values.len(),
        }
    }
}

/// Reads one feature file and checks it against the declared dimensions.
pub fn load_linguistic(
    kind: LinguisticKind,
    path: &Path,
    dims: &LinguisticDims,
) -> Result<LinguisticFeature> {
    let mismatch = |detail: String| {
        Error::format(
            "linguistic feature",
            format!("{}: {detail}", path.display()),
        )
    };
    match kind {
        LinguisticKind::PosTags => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let ids = parse_pos_tags(&text, &dims.tagset)?;
            Ok(LinguisticFeature::PosTags {
                ids,
                tagset_size: dims.tagset.len(),
            })
        }
        LinguisticKind::TokenEmbeddings(combine) => {
            let arr = read_embedding(path)?;
            if arr.cols != dims.token_dim {
                return Err(mismatch(format!(
                    "token dim {} != declared {}",
                    arr.cols, dims.token_dim
                )));
            }
            let values =
                combine_token_layers(&arr, combine).map_err(|e| mismatch(e.to_string()))?;
            Ok(LinguisticFeature::TokenEmbeddings { values, combine })
        }
        LinguisticKind::UtteranceEmbedding => {
            let arr = read_embedding(path)?;
            if arr.layers != 1 || arr.rows != 1 || arr.cols != dims.utterance_dim {
                return Err(mismatch(format!(
                    "utterance embedding {}x{}x{} != 1x1x{}",
                    arr.layers, arr.rows, arr.cols, dims.utterance_dim
                )));
            }
            Ok(LinguisticFeature::UtteranceEmbedding {
                values: arr.data.iter().map(|&v| v as f64).collect(),
            })
        }
        LinguisticKind::EncoderOutputs => {
            let arr = read_embedding(path)?;
            if arr.layers != 1 || arr.cols != dims.encoder_dim {
                return Err(mismatch(format!(
                    "encoder outputs {}x{}x{} != 1xTx{}",
                    arr.layers, arr.rows, arr.cols, dims.encoder_dim
                )));
            }
            Ok(LinguisticFeature::EncoderOutputs {
                values: arr.matrix(0),
            })
        }
    }
}
