use serde::{Deserialize, Serialize};

use super::conv::{ConvStack, ConvStackConfig};
use super::encoder::{EncodedFeature, FeatureEncoder, FeatureEncoderConfig};
use super::{frame_head, scaled, FeatureVariant, ModelInput, ModelOutput};
use crate::error::{Error, Result};
use crate::tensor::{CellKind, Graph, Layer, LayerConfig, ParameterStore, Sequential, Tensor, Var};

/// Reserved listener id trained on per-utterance mean scores.
pub const MEAN_LISTENER: usize = 0;

pub(crate) const OUTPUT_BIAS: &str = "decoder.head.3.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderMode {
    FeedForward,
    Recurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdnetConfig {
    pub conv: ConvStackConfig,
    /// Real listeners are ids `1..=n_listeners`.
    pub n_listeners: usize,
    pub listener_dim: usize,
    pub decoder: DecoderMode,
    pub decoder_hidden: usize,
    pub dropout: f64,
    pub feature: Option<FeatureEncoderConfig>,
}

impl LdnetConfig {
    /// The decoder is recurrent exactly when pros-align is fused.
    pub fn standard(
        input_bins: usize,
        n_listeners: usize,
        divisor: usize,
        dropout: f64,
        feature: Option<FeatureEncoderConfig>,
    ) -> Self {
        let decoder = match &feature {
            Some(f) if f.variant == FeatureVariant::ProsAlign => DecoderMode::Recurrent,
            _ => DecoderMode::FeedForward,
        };
        LdnetConfig {
            conv: ConvStackConfig::standard(input_bins, divisor),
            n_listeners,
            listener_dim: scaled(128, divisor),
            decoder,
            decoder_hidden: scaled(128, divisor),
            dropout,
            feature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pros_align = self
            .feature
            .as_ref()
            .is_some_and(|f| f.variant == FeatureVariant::ProsAlign);
        if pros_align != (self.decoder == DecoderMode::Recurrent) {
            return Err(Error::Config(format!(
                "LDNet uses the recurrent decoder exactly with pros-align (decoder {:?}, feature {})",
                self.decoder,
                self.feature.as_ref().map_or(FeatureVariant::None, |f| f.variant)
            )));
        }
        Ok(())
    }

    /// Width of each step entering the decoder: encoder, listener and, for
    /// summary fusion, the feature summary.
    pub fn decoder_input_dim(&self) -> usize {
        let base = self.conv.output_dim() + self.listener_dim;
        match (&self.feature, self.decoder) {
            (Some(f), DecoderMode::FeedForward) => base + f.output_dim(),
            _ => base,
        }
    }

    /// Width entering the frame-level feed-forward head.
    pub fn head_input_dim(&self) -> usize {
        match self.decoder {
            DecoderMode::FeedForward => self.decoder_input_dim(),
            DecoderMode::Recurrent => {
                2 * self.decoder_hidden
                    + self
                        .feature
                        .as_ref()
                        .map_or(0, FeatureEncoderConfig::output_dim)
            }
        }
    }
}

/// Listener-dependent CNN scorer with a mean-listener identity.
#[derive(Clone, Debug)]
pub struct Ldnet {
    pub config: LdnetConfig,
    conv: ConvStack,
    listeners: Layer,
    feature: Option<FeatureEncoder>,
    fusion: Option<Layer>,
    blstm: Option<Layer>,
    head: Sequential,
}

/// Listener-independent part of the forward pass, shared across listeners.
#[derive(Clone, Copy, Debug)]
pub struct LdnetEncoding {
    pub frames: Var,
    pub feature: Option<EncodedFeature>,
}

impl Ldnet {
    pub fn build(config: LdnetConfig, store: &mut ParameterStore) -> Result<Self> {
        config.validate()?;
        let conv = ConvStack::build("conv", config.conv.clone(), store)?;
        let listeners = Layer::build(
            "listener",
            LayerConfig::Embedding {
                vocab: config.n_listeners + 1,
                dim: config.listener_dim,
            },
            store,
        )?;
        let feature = config
            .feature
            .clone()
            .map(|f| FeatureEncoder::build("feature", f, store))
            .transpose()?;
        let dim = config.decoder_input_dim();
        let (fusion, blstm) = match config.decoder {
            DecoderMode::FeedForward => {
                let fusion = match feature {
                    Some(_) => Some(Layer::build(
                        "fusion",
                        LayerConfig::Linear {
                            input: dim,
                            output: dim,
                        },
                        store,
                    )?),
                    None => None,
                };
                (fusion, None)
            }
            DecoderMode::Recurrent => {
                let blstm = LayerConfig::Bidirectional {
                    cell: CellKind::Lstm,
                    input: dim,
                    hidden: config.decoder_hidden,
                };
                (None, Some(Layer::build("decoder.blstm", blstm, store)?))
            }
        };
        let head = frame_head(
            "decoder.head",
            config.head_input_dim(),
            config.decoder_hidden,
            config.dropout,
            store,
        )?;
        Ok(Ldnet {
            config,
            conv,
            listeners,
            feature,
            fusion,
            blstm,
            head,
        })
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &ModelInput,
    ) -> Result<LdnetEncoding> {
        let spec = g.constant(input.spectrogram.clone());
        let frames = self.conv.forward(g, store, spec)?;
        let feature = match (&self.feature, &input.feature) {
            (Some(enc), Some(payload)) => Some(enc.forward(g, store, payload)?),
            (None, None) => None,
            (Some(enc), None) => {
                return Err(Error::InvalidArgument(format!(
                    "LDNet variant needs {} input",
                    enc.config.variant
                )))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "baseline LDNet takes no feature input".into(),
                ))
            }
        };
        Ok(LdnetEncoding { frames, feature })
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        enc: &LdnetEncoding,
        listener: usize,
    ) -> Result<ModelOutput> {
        if listener > self.config.n_listeners {
            return Err(Error::UnknownListener(listener));
        }
        let t = g.shape(enc.frames)[0];
        let id = g.constant(Tensor::vector(vec![listener as f64]));
        let l = self.listeners.forward(g, store, id)?;
        let l = g.repeat_rows(l, t)?;
        let mut x = g.concat_cols(&[enc.frames, l])?;
        if let Some(fusion) = &self.fusion {
            let f = enc
                .feature
                .ok_or_else(|| Error::InvalidArgument("missing feature encoding".into()))?;
            let s = g.repeat_rows(f.summary, t)?;
            let joined = g.concat_cols(&[x, s])?;
            let h = fusion.forward(g, store, joined)?;
            x = g.relu(h);
        }
        if let Some(blstm) = &self.blstm {
            x = blstm.forward(g, store, x)?;
            if let Some(f) = enc.feature {
                let tf = g.shape(f.sequence)[0];
                if tf != t {
                    return Err(Error::shape(
                        "pros-align fusion",
                        format!("{tf} feature frames for {t} spectrogram frames"),
                    ));
                }
                x = g.concat_cols(&[x, f.sequence])?;
            }
        }
        let frames = self.head.forward(g, store, x)?;
        let utterance = g.mean_rows(frames)?;
        Ok(ModelOutput {
            frames: Some(frames),
            utterance,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &ModelInput,
        listener: usize,
    ) -> Result<ModelOutput> {
        let enc = self.encode(g, store, input)?;
        self.decode(g, store, &enc, listener)
    }
}
