use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{FeatureEncoder, FeatureEncoderConfig};
use super::{ModelInput, ModelOutput};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Layer, LayerConfig, ParameterStore, Tensor, Var};
use crate::util;

/// Width of the substitute backbone embeddings.
pub const BACKBONE_DIM: usize = 64;

pub(crate) const OUTPUT_BIAS: &str = "head.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslHeadConfig {
    pub input_bins: usize,
    pub backbone_dim: usize,
    /// Seed of the frozen spectrogram projection standing in for the backbone.
    pub backbone_seed: u64,
    pub feature: Option<FeatureEncoderConfig>,
}

impl SslHeadConfig {
    /// The backbone width is an input size and is not divided.
    pub fn standard(
        input_bins: usize,
        backbone_seed: u64,
        feature: Option<FeatureEncoderConfig>,
    ) -> Self {
        SslHeadConfig {
            input_bins,
            backbone_dim: BACKBONE_DIM,
            backbone_seed,
            feature,
        }
    }

    pub fn head_input_dim(&self) -> usize {
        self.backbone_dim
            + self
                .feature
                .as_ref()
                .map_or(0, FeatureEncoderConfig::output_dim)
    }
}

/// Linear scorer over mean-pooled backbone embeddings, optionally joined
/// with a feature summary.
#[derive(Clone, Debug)]
pub struct SslHead {
    pub config: SslHeadConfig,
    projection: Tensor,
    feature: Option<FeatureEncoder>,
    head: Layer,
}

impl SslHead {
    pub fn build(config: SslHeadConfig, store: &mut ParameterStore) -> Result<Self> {
        if config.input_bins == 0 || config.backbone_dim == 0 {
            return Err(Error::Config(format!("invalid SSL head {config:?}")));
        }
        if config
            .feature
            .as_ref()
            .is_some_and(|f| f.variant == super::FeatureVariant::ProsAlign)
        {
            return Err(Error::Config(
                "the SSL head has no frame-level fusion point for pros-align".into(),
            ));
        }
        let projection =
            frozen_projection(config.input_bins, config.backbone_dim, config.backbone_seed);
        let feature = config
            .feature
            .clone()
            .map(|f| FeatureEncoder::build("feature", f, store))
            .transpose()?;
        let head = Layer::build(
            "head",
            LayerConfig::Linear {
                input: config.head_input_dim(),
                output: 1,
            },
            store,
        )?;
        Ok(SslHead {
            config,
            projection,
            feature,
            head,
        })
    }

    /// `[T, D]` backbone embeddings, precomputed or projected from the spectrogram.
    pub fn backbone(&self, input: &ModelInput) -> Result<Tensor> {
        if let Some(b) = &input.backbone {
            return match b.dims2() {
                Some((t, d)) if t > 0 && d == self.config.backbone_dim => Ok(b.clone()),
                _ => Err(Error::shape(
                    "ssl backbone",
                    format!(
                        "expected [T, {}], got {:?}",
                        self.config.backbone_dim,
                        b.shape()
                    ),
                )),
            };
        }
        let mut g = Graph::untracked(crate::tensor::Mode::Eval, 0);
        let s = g.constant(input.spectrogram.clone());
        let p = g.constant(self.projection.clone());
        let e = g.matmul(s, p).map_err(|e| e.in_layer("ssl backbone"))?;
        Ok(g.value(e).clone())
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &ModelInput,
    ) -> Result<ModelOutput> {
        let backbone = self.backbone(input)?;
        let e = g.constant(backbone);
        let pooled = g.mean_rows(e)?;
        let joined = self.join_feature(g, store, input, pooled)?;
        let utterance = self.head.forward(g, store, joined)?;
        Ok(ModelOutput {
            frames: None,
            utterance,
        })
    }

    fn join_feature(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &ModelInput,
        pooled: Var,
    ) -> Result<Var> {
        match (&self.feature, &input.feature) {
            (Some(enc), Some(payload)) => {
                let f = enc.forward(g, store, payload)?;
                g.concat_cols(&[pooled, f.summary])
            }
            (None, None) => Ok(pooled),
            (Some(enc), None) => Err(Error::InvalidArgument(format!(
                "SSL head variant needs {} input",
                enc.config.variant
            ))),
            (None, Some(_)) => Err(Error::InvalidArgument(
                "baseline SSL head takes no feature input".into(),
            )),
        }
    }
}

/// `[F, D]` uniform entries with unit output variance for unit-variance input.
fn frozen_projection(bins: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = util::rng(util::mix_seed(&[seed, 0x7373_6c00]));
    let a = (3.0 / bins as f64).sqrt();
    Tensor::matrix(
        bins,
        dim,
        (0..bins * dim).map(|_| rng.gen_range(-a..a)).collect(),
    )
}
