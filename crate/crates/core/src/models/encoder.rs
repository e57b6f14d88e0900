use serde::{Deserialize, Serialize};

use super::{scaled, FeaturePayload, FeatureVariant};
use crate::error::{Error, Result};
use crate::tensor::{CellKind, Graph, Layer, LayerConfig, ParameterStore, Sequential, Tensor, Var};

/// Auxiliary-feature encoder: optional embedding, feed-forward stack, then
/// an optional bidirectional recurrent layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoderConfig {
    pub variant: FeatureVariant,
    /// Vocabulary size for id inputs, feature width otherwise.
    pub input_dim: usize,
    pub embedding_dim: Option<usize>,
    pub feed_forward: Vec<usize>,
    /// ReLU and dropout after every feed-forward layer except a final
    /// projection when there is no recurrent layer.
    pub dropout: f64,
    pub recurrent: Option<(CellKind, usize)>,
}

impl FeatureEncoderConfig {
    /// Layer sizes of the reference encoder for `variant`, divided by
    /// `divisor` (rounded up).
    pub fn standard(
        variant: FeatureVariant,
        input_dim: usize,
        divisor: usize,
        dropout: f64,
    ) -> Result<Self> {
        let s = |d| scaled(d, divisor);
        let (embedding_dim, feed_forward, recurrent) = match variant {
            FeatureVariant::None => {
                return Err(Error::Config(
                    "no feature encoder for variant `none`".into(),
                ))
            }
            FeatureVariant::ProsAlign | FeatureVariant::Prosodic => {
                (Some(s(64)), vec![s(128)], Some((CellKind::Gru, s(128))))
            }
            FeatureVariant::EncOuts | FeatureVariant::SemW(_) => {
                (None, vec![], Some((CellKind::Lstm, s(256))))
            }
            FeatureVariant::PosTags => (Some(s(256)), vec![s(256)], Some((CellKind::Gru, s(256)))),
            FeatureVariant::SemUtt => (None, vec![s(512), s(256)], None),
        };
        Ok(FeatureEncoderConfig {
            variant,
            input_dim,
            embedding_dim,
            feed_forward,
            dropout,
            recurrent,
        })
    }

    /// Width of both the sequence and the summary output.
    pub fn output_dim(&self) -> usize {
        match self.recurrent {
            Some((_, h)) => 2 * h,
            None => *self.feed_forward.last().unwrap_or(&self.input_dim),
        }
    }

    fn takes_prosody(&self) -> bool {
        matches!(
            self.variant,
            FeatureVariant::ProsAlign | FeatureVariant::Prosodic
        )
    }
}

#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    pub config: FeatureEncoderConfig,
    embedding: Option<Layer>,
    feed_forward: Sequential,
    recurrent: Option<Layer>,
}

/// Per-step encoder output and its final-step summary (`[1, H]`).
#[derive(Clone, Copy, Debug)]
pub struct EncodedFeature {
    pub sequence: Var,
    pub summary: Var,
}

impl FeatureEncoder {
    pub fn build(
        prefix: &str,
        config: FeatureEncoderConfig,
        store: &mut ParameterStore,
    ) -> Result<Self> {
        let embedding = match config.embedding_dim {
            Some(dim) => Some(Layer::build(
                &format!("{prefix}.embedding"),
                LayerConfig::Embedding {
                    vocab: config.input_dim,
                    dim,
                },
                store,
            )?),
            None => None,
        };
        let mut width = match config.embedding_dim {
            Some(dim) if config.takes_prosody() => dim + 2,
            Some(dim) => dim,
            None => config.input_dim,
        };
        let mut layers = Vec::new();
        let n_ff = config.feed_forward.len();
        for (i, &out) in config.feed_forward.iter().enumerate() {
            layers.push(LayerConfig::Linear {
                input: width,
                output: out,
            });
            let projection = config.recurrent.is_none() && i + 1 == n_ff && n_ff > 1;
            if !projection {
                layers.push(LayerConfig::Relu);
                if config.recurrent.is_some() && config.dropout > 0.0 {
                    layers.push(LayerConfig::Dropout { p: config.dropout });
                }
            }
            width = out;
        }
        let feed_forward = Sequential::build(&format!("{prefix}.ff"), layers, store)?;
        let recurrent = match config.recurrent {
            Some((cell, hidden)) => Some(Layer::build(
                &format!("{prefix}.rnn"),
                LayerConfig::Bidirectional {
                    cell,
                    input: width,
                    hidden,
                },
                store,
            )?),
            None => None,
        };
        Ok(FeatureEncoder {
            config,
            embedding,
            feed_forward,
            recurrent,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        payload: &FeaturePayload,
    ) -> Result<EncodedFeature> {
        let mismatch = || {
            Error::InvalidArgument(format!(
                "payload {} does not suit the {} encoder",
                payload.describe(),
                self.config.variant
            ))
        };
        let x = match (payload, &self.embedding) {
            (FeaturePayload::Prosodic { phone_ids, values }, Some(emb))
                if self.config.takes_prosody() =>
            {
                if values.shape() != [phone_ids.len(), 2] {
                    return Err(Error::shape(
                        "prosodic payload",
                        format!("{:?} for {} ids", values.shape(), phone_ids.len()),
                    ));
                }
                let ids = g.constant(ids_tensor(phone_ids));
                let e = emb.forward(g, store, ids)?;
                let v = g.constant(values.clone());
                g.concat_cols(&[e, v])?
            }
            (FeaturePayload::Tokens(ids), Some(emb)) if !self.config.takes_prosody() => {
                let ids = g.constant(ids_tensor(ids));
                emb.forward(g, store, ids)?
            }
            (FeaturePayload::Sequence(t), None) | (FeaturePayload::Vector(t), None) => {
                let ok = matches!(
                    (payload, self.config.recurrent.is_some()),
                    (FeaturePayload::Sequence(_), true) | (FeaturePayload::Vector(_), false)
                );
                if !ok {
                    return Err(mismatch());
                }
                if t.dims2().map(|d| d.1) != Some(self.config.input_dim) {
                    return Err(Error::shape(
                        format!("{} encoder", self.config.variant),
                        format!(
                            "expected width {}, got {:?}",
                            self.config.input_dim,
                            t.shape()
                        ),
                    ));
                }
                g.constant(t.clone())
            }
            _ => return Err(mismatch()),
        };
        let h = self.feed_forward.forward(g, store, x)?;
        let sequence = match &self.recurrent {
            Some(r) => r.forward(g, store, h)?,
            None => h,
        };
        let t = g.shape(sequence)[0];
        let summary = g.slice_rows(sequence, t - 1, t)?;
        Ok(EncodedFeature { sequence, summary })
    }
}

fn ids_tensor(ids: &[usize]) -> Tensor {
    Tensor::vector(ids.iter().map(|&i| i as f64).collect())
}
