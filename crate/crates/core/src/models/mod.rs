//! Feature encoders and the three MOS predictor families.
//!
//! Every model reads a log-magnitude spectrogram `[T, F]` and an optional
//! auxiliary feature payload. MOSNet and LDNet emit per-frame scores whose
//! mean is the utterance score; the SSL head emits only an utterance score.

mod check;
mod conv;
mod encoder;
mod ldnet;
mod mosnet;
mod ssl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use check::{architecture_gradient_check, gradcheck_dims, random_input};
pub use conv::{ConvStack, ConvStackConfig};
pub use encoder::{EncodedFeature, FeatureEncoder, FeatureEncoderConfig};
pub use ldnet::{DecoderMode, Ldnet, LdnetConfig, LdnetEncoding, MEAN_LISTENER};
pub use mosnet::{Mosnet, MosnetConfig};
pub use ssl::{SslHead, SslHeadConfig, BACKBONE_DIM};

use crate::error::{Error, Result};
use crate::features::{
    FrameAlignedProsodic, LinguisticDims, LinguisticFeature, LinguisticKind, ProsodicSequence,
    TokenCombine,
};
use crate::tensor::{Graph, LayerConfig, ParameterStore, Sequential, Tensor, Var};

/// `ceil(d / divisor)`, never below 1.
pub(crate) fn scaled(d: usize, divisor: usize) -> usize {
    d.div_ceil(divisor.max(1)).max(1)
}

/// Auxiliary input fused into a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureVariant {
    None,
    /// Phone prosody repeated over spectrogram frames.
    ProsAlign,
    /// Phone-level prosody sequence.
    Prosodic,
    EncOuts,
    PosTags,
    SemUtt,
    SemW(TokenCombine),
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 9] = [
        FeatureVariant::None,
        FeatureVariant::ProsAlign,
        FeatureVariant::Prosodic,
        FeatureVariant::EncOuts,
        FeatureVariant::PosTags,
        FeatureVariant::SemUtt,
        FeatureVariant::SemW(TokenCombine::Last),
        FeatureVariant::SemW(TokenCombine::Sum4),
        FeatureVariant::SemW(TokenCombine::Cat4),
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::None => "none",
            FeatureVariant::ProsAlign => "pros-align",
            FeatureVariant::Prosodic => "prosodic",
            FeatureVariant::EncOuts => "enc-outs",
            FeatureVariant::PosTags => "pos-tags",
            FeatureVariant::SemUtt => "sem-utt",
            FeatureVariant::SemW(TokenCombine::Last) => "sem-w-last",
            FeatureVariant::SemW(TokenCombine::Sum4) => "sem-w-sum4",
            FeatureVariant::SemW(TokenCombine::Cat4) => "sem-w-cat4",
        }
    }

    pub fn is_prosodic(self) -> bool {
        matches!(self, FeatureVariant::ProsAlign | FeatureVariant::Prosodic)
    }

    /// The precomputed file family this variant reads, if any.
    pub fn linguistic_kind(self) -> Option<LinguisticKind> {
        match self {
            FeatureVariant::EncOuts => Some(LinguisticKind::EncoderOutputs),
            FeatureVariant::PosTags => Some(LinguisticKind::PosTags),
            FeatureVariant::SemUtt => Some(LinguisticKind::UtteranceEmbedding),
            FeatureVariant::SemW(c) => Some(LinguisticKind::TokenEmbeddings(c)),
            _ => None,
        }
    }

    /// Encoder input width: phone inventory, tagset size or embedding width.
    pub fn input_dim(self, n_phones: usize, dims: &LinguisticDims) -> Option<usize> {
        match self {
            FeatureVariant::None => None,
            FeatureVariant::ProsAlign | FeatureVariant::Prosodic => Some(n_phones),
            FeatureVariant::EncOuts => Some(dims.encoder_dim),
            FeatureVariant::PosTags => Some(dims.tagset.len()),
            FeatureVariant::SemUtt => Some(dims.utterance_dim),
            FeatureVariant::SemW(c) => Some(c.output_dim(dims.token_dim)),
        }
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature variant `{s}`")))
    }
}

impl TryFrom<String> for FeatureVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureVariant> for String {
    fn from(v: FeatureVariant) -> String {
        v.name().to_string()
    }
}

/// Per-utterance input to a feature encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum FeaturePayload {
    /// Phone ids with `[T, 2]` normalized (log F0, duration) values.
    Prosodic {
        phone_ids: Vec<usize>,
        values: Tensor,
    },
    Tokens(Vec<usize>),
    /// `[T, D]` embedding sequence.
    Sequence(Tensor),
    /// `[1, D]` single vector.
    Vector(Tensor),
}

impl FeaturePayload {
    pub fn describe(&self) -> String {
        match self {
            FeaturePayload::Prosodic { phone_ids, .. } => format!("prosodic[{}]", phone_ids.len()),
            FeaturePayload::Tokens(ids) => format!("tokens[{}]", ids.len()),
            FeaturePayload::Sequence(t) => format!("sequence{:?}", t.shape()),
            FeaturePayload::Vector(t) => format!("vector{:?}", t.shape()),
        }
    }

    pub fn from_prosodic(seq: &ProsodicSequence) -> Self {
        prosodic_payload(&seq.phone_ids, &seq.f0, &seq.duration)
    }

    pub fn from_frame_aligned(seq: &FrameAlignedProsodic) -> Self {
        prosodic_payload(&seq.phone_ids, &seq.f0, &seq.duration)
    }

    pub fn from_linguistic(feature: LinguisticFeature) -> Self {
        match feature {
            LinguisticFeature::PosTags { ids, .. } => FeaturePayload::Tokens(ids),
            LinguisticFeature::TokenEmbeddings { values, .. }
            | LinguisticFeature::EncoderOutputs { values } => FeaturePayload::Sequence(values),
            LinguisticFeature::UtteranceEmbedding { values } => {
                FeaturePayload::Vector(Tensor::matrix(1, values.len(), values))
            }
        }
    }
}

fn prosodic_payload(ids: &[usize], f0: &[f64], duration: &[f64]) -> FeaturePayload {
    let values = f0
        .iter()
        .zip(duration)
        .flat_map(|(&f, &d)| [f, d])
        .collect();
    FeaturePayload::Prosodic {
        phone_ids: ids.to_vec(),
        values: Tensor::matrix(ids.len(), 2, values),
    }
}

/// Everything a model reads for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[T, F]` log-magnitude spectrogram.
    pub spectrogram: Tensor,
    pub feature: Option<FeaturePayload>,
    /// Precomputed `[T, D]` backbone embeddings for the SSL head; projected
    /// from the spectrogram when absent.
    pub backbone: Option<Tensor>,
}

impl ModelInput {
    pub fn new(spectrogram: Tensor, feature: Option<FeaturePayload>) -> Self {
        ModelInput {
            spectrogram,
            feature,
            backbone: None,
        }
    }
}

/// `frames` is `[T, 1]` (absent for the SSL head); `utterance` is `[1, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub frames: Option<Var>,
    pub utterance: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mosnet,
    Ldnet,
    Ssl,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mosnet, Family::Ldnet, Family::Ssl];

    pub fn name(self) -> &'static str {
        match self {
            Family::Mosnet => "mosnet",
            Family::Ldnet => "ldnet",
            Family::Ssl => "ssl",
        }
    }

    /// Feature variants evaluated with this family.
    pub fn variants(self) -> Vec<FeatureVariant> {
        use FeatureVariant as V;
        match self {
            Family::Mosnet => vec![V::None, V::ProsAlign],
            Family::Ldnet => V::ALL.to_vec(),
            Family::Ssl => V::ALL.into_iter().filter(|v| *v != V::ProsAlign).collect(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

/// Sizes needed to instantiate a default configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub input_bins: usize,
    pub n_phones: usize,
    pub linguistic: LinguisticDims,
    /// Real listeners; LDNet adds the mean listener on top.
    pub n_listeners: usize,
    /// Divides every hidden width (rounded up); 1 gives the reference sizes.
    pub divisor: usize,
    pub dropout: f64,
    pub backbone_seed: u64,
}

impl ModelDims {
    pub fn new(
        input_bins: usize,
        n_phones: usize,
        linguistic: LinguisticDims,
        n_listeners: usize,
    ) -> Self {
        ModelDims {
            input_bins,
            n_phones,
            linguistic,
            n_listeners,
            divisor: 1,
            dropout: 0.3,
            backbone_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Mosnet(MosnetConfig),
    Ldnet(LdnetConfig),
    Ssl(SslHeadConfig),
}

impl ModelConfig {
    /// Reference configuration of `family` with `variant` fused in.
    pub fn standard(family: Family, variant: FeatureVariant, dims: &ModelDims) -> Result<Self> {
        if !family.variants().contains(&variant) {
            return Err(Error::Config(format!(
                "{family} does not support feature `{variant}`"
            )));
        }
        let feature = match variant.input_dim(dims.n_phones, &dims.linguistic) {
            Some(input) => Some(FeatureEncoderConfig::standard(
                variant,
                input,
                dims.divisor,
                dims.dropout,
            )?),
            None => None,
        };
        Ok(match family {
            Family::Mosnet => ModelConfig::Mosnet(MosnetConfig::standard(
                dims.input_bins,
                dims.divisor,
                dims.dropout,
                feature,
            )),
            Family::Ldnet => ModelConfig::Ldnet(LdnetConfig::standard(
                dims.input_bins,
                dims.n_listeners,
                dims.divisor,
                dims.dropout,
                feature,
            )),
            Family::Ssl => ModelConfig::Ssl(SslHeadConfig::standard(
                dims.input_bins,
                dims.backbone_seed,
                feature,
            )),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Mosnet(_) => Family::Mosnet,
            ModelConfig::Ldnet(_) => Family::Ldnet,
            ModelConfig::Ssl(_) => Family::Ssl,
        }
    }

    pub fn feature(&self) -> Option<&FeatureEncoderConfig> {
        match self {
            ModelConfig::Mosnet(c) => c.feature.as_ref(),
            ModelConfig::Ldnet(c) => c.feature.as_ref(),
            ModelConfig::Ssl(c) => c.feature.as_ref(),
        }
    }

    pub fn variant(&self) -> FeatureVariant {
        self.feature().map_or(FeatureVariant::None, |f| f.variant)
    }

    pub fn input_bins(&self) -> usize {
        match self {
            ModelConfig::Mosnet(c) => c.conv.input_bins,
            ModelConfig::Ldnet(c) => c.conv.input_bins,
            ModelConfig::Ssl(c) => c.input_bins,
        }
    }
}

/// A built model; parameters live in the accompanying [`ParameterStore`].
#[derive(Clone, Debug)]
pub enum Model {
    Mosnet(Mosnet),
    Ldnet(Ldnet),
    Ssl(SslHead),
}

impl Model {
    pub fn build(config: &ModelConfig, store: &mut ParameterStore) -> Result<Self> {
        Ok(match config {
            ModelConfig::Mosnet(c) => Model::Mosnet(Mosnet::build(c.clone(), store)?),
            ModelConfig::Ldnet(c) => Model::Ldnet(Ldnet::build(c.clone(), store)?),
            ModelConfig::Ssl(c) => Model::Ssl(SslHead::build(c.clone(), store)?),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Model::Mosnet(_) => Family::Mosnet,
            Model::Ldnet(_) => Family::Ldnet,
            Model::Ssl(_) => Family::Ssl,
        }
    }

    /// Listener-independent score; LDNet uses the mean listener.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &ModelInput,
    ) -> Result<ModelOutput> {
        match self {
            Model::Mosnet(m) => m.forward(g, store, input),
            Model::Ldnet(m) => m.forward(g, store, input, MEAN_LISTENER),
            Model::Ssl(m) => m.forward(g, store, input),
        }
    }

    /// Parameter holding the bias of the final scoring layer.
    pub fn output_bias(&self) -> &'static str {
        match self {
            Model::Mosnet(_) => mosnet::OUTPUT_BIAS,
            Model::Ldnet(_) => ldnet::OUTPUT_BIAS,
            Model::Ssl(_) => ssl::OUTPUT_BIAS,
        }
    }

    /// Runs each input independently on the same graph.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        inputs: &[ModelInput],
    ) -> Result<Vec<ModelOutput>> {
        inputs.iter().map(|x| self.forward(g, store, x)).collect()
    }
}

/// `Linear(hidden) → ReLU → Dropout → Linear(1)`.
pub(crate) fn frame_head(
    prefix: &str,
    input: usize,
    hidden: usize,
    dropout: f64,
    store: &mut ParameterStore,
) -> Result<Sequential> {
    let layers = vec![
        LayerConfig::Linear {
            input,
            output: hidden,
        },
        LayerConfig::Relu,
        LayerConfig::Dropout { p: dropout },
        LayerConfig::Linear {
            input: hidden,
            output: 1,
        },
    ];
    Sequential::build(prefix, layers, store)
}
