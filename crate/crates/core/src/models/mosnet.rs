use serde::{Deserialize, Serialize};

use super::conv::{ConvStack, ConvStackConfig};
use super::encoder::{FeatureEncoder, FeatureEncoderConfig};
use super::{frame_head, scaled, FeatureVariant, ModelInput, ModelOutput};
use crate::error::{Error, Result};
use crate::tensor::{CellKind, Graph, Layer, LayerConfig, ParameterStore, Sequential};

pub(crate) const OUTPUT_BIAS: &str = "head.3.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosnetConfig {
    pub conv: ConvStackConfig,
    pub blstm_hidden: usize,
    pub ff_hidden: usize,
    pub dropout: f64,
    /// Frame-aligned prosody encoder joined to the BLSTM outputs.
    pub feature: Option<FeatureEncoderConfig>,
}

impl MosnetConfig {
    pub fn standard(
        input_bins: usize,
        divisor: usize,
        dropout: f64,
        feature: Option<FeatureEncoderConfig>,
    ) -> Self {
        MosnetConfig {
            conv: ConvStackConfig::standard(input_bins, divisor),
            blstm_hidden: scaled(128, divisor),
            ff_hidden: scaled(128, divisor),
            dropout,
            feature,
        }
    }

    /// Input width of the frame-level feed-forward head.
    pub fn head_input_dim(&self) -> usize {
        2 * self.blstm_hidden
            + self
                .feature
                .as_ref()
                .map_or(0, FeatureEncoderConfig::output_dim)
    }
}

/// CNN-BLSTM frame scorer; the utterance score is the mean frame score.
#[derive(Clone, Debug)]
pub struct Mosnet {
    pub config: MosnetConfig,
    conv: ConvStack,
    blstm: Layer,
    feature: Option<FeatureEncoder>,
    head: Sequential,
}

impl Mosnet {
    pub fn build(config: MosnetConfig, store: &mut ParameterStore) -> Result<Self> {
        if let Some(f) = &config.feature {
            if f.variant != FeatureVariant::ProsAlign {
                return Err(Error::Config(format!(
                    "MOSNet fuses only pros-align, not {}",
                    f.variant
                )));
            }
        }
        let conv = ConvStack::build("conv", config.conv.clone(), store)?;
        let blstm = Layer::build(
            "blstm",
            LayerConfig::Bidirectional {
                cell: CellKind::Lstm,
                input: config.conv.output_dim(),
                hidden: config.blstm_hidden,
            },
            store,
        )?;
        let feature = config
            .feature
            .clone()
            .map(|f| FeatureEncoder::build("feature", f, store))
            .transpose()?;
        let head = frame_head(
            "head",
            config.head_input_dim(),
            config.ff_hidden,
            config.dropout,
            store,
        )?;
        Ok(Mosnet {
            config,
            conv,
            blstm,
            feature,
            head,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &ModelInput,
    ) -> Result<ModelOutput> {
        let spec = g.constant(input.spectrogram.clone());
        let c = self.conv.forward(g, store, spec)?;
        let mut h = self.blstm.forward(g, store, c)?;
        match (&self.feature, &input.feature) {
            (Some(enc), Some(payload)) => {
                let f = enc.forward(g, store, payload)?;
                let (t_spec, t_feat) = (g.shape(h)[0], g.shape(f.sequence)[0]);
                if t_spec != t_feat {
                    return Err(Error::shape(
                        "pros-align fusion",
                        format!("{t_feat} feature frames for {t_spec} spectrogram frames"),
                    ));
                }
                h = g.concat_cols(&[h, f.sequence])?;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "MOSNet variant needs pros-align input".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "baseline MOSNet takes no feature input".into(),
                ))
            }
        }
        let frames = self.head.forward(g, store, h)?;
        let utterance = g.mean_rows(frames)?;
        Ok(ModelOutput {
            frames: Some(frames),
            utterance,
        })
    }
}
