use rand::Rng;

use super::{Family, FeaturePayload, FeatureVariant, Model, ModelConfig, ModelDims, ModelInput};
use crate::error::Result;
use crate::features::{LinguisticDims, Vocabulary};
use crate::tensor::{gradient_check, GradCheckReport, ParameterStore, Tensor};
use crate::util;

/// Reduced dimensions used for architecture gradient checks.
pub fn gradcheck_dims() -> ModelDims {
    let linguistic = LinguisticDims {
        tagset: Vocabulary::new(["A", "B", "C", "D"]).expect("distinct tags"),
        token_dim: 3,
        utterance_dim: 5,
        encoder_dim: 4,
    };
    ModelDims {
        divisor: 32,
        dropout: 0.3,
        backbone_seed: 9,
        ..ModelDims::new(20, 6, linguistic, 3)
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

/// A random spectrogram of `frames` rows with a matching random payload for `variant`.
pub fn random_input(
    variant: FeatureVariant,
    frames: usize,
    dims: &ModelDims,
    seed: u64,
) -> ModelInput {
    let mut rng = util::rng(seed);
    let spectrogram = uniform(&mut rng, frames, dims.input_bins);
    let ling = &dims.linguistic;
    let n = if variant == FeatureVariant::ProsAlign {
        frames
    } else {
        4
    };
    let payload = match variant {
        FeatureVariant::None => None,
        FeatureVariant::ProsAlign | FeatureVariant::Prosodic => Some(FeaturePayload::Prosodic {
            phone_ids: (0..n).map(|_| rng.gen_range(0..dims.n_phones)).collect(),
            values: uniform(&mut rng, n, 2),
        }),
        FeatureVariant::PosTags => Some(FeaturePayload::Tokens(
            (0..n)
                .map(|_| rng.gen_range(0..ling.tagset.len()))
                .collect(),
        )),
        FeatureVariant::EncOuts => Some(FeaturePayload::Sequence(uniform(
            &mut rng,
            n,
            ling.encoder_dim,
        ))),
        FeatureVariant::SemW(c) => Some(FeaturePayload::Sequence(uniform(
            &mut rng,
            n,
            c.output_dim(ling.token_dim),
        ))),
        FeatureVariant::SemUtt => Some(FeaturePayload::Vector(uniform(
            &mut rng,
            1,
            ling.utterance_dim,
        ))),
    };
    ModelInput::new(spectrogram, payload)
}

/// Gradient check of a full model at [`gradcheck_dims`] on random
/// parameters and input. Frame and utterance outputs are both checked.
pub fn architecture_gradient_check(
    family: Family,
    variant: FeatureVariant,
    seed: u64,
) -> Result<GradCheckReport> {
    let dims = gradcheck_dims();
    let config = ModelConfig::standard(family, variant, &dims)?;
    let mut store = ParameterStore::new(seed);
    let model = Model::build(&config, &mut store)?;
    store.randomize(util::mix_seed(&[seed, 1]), 0.5);
    let input = random_input(variant, 4, &dims, util::mix_seed(&[seed, 2]));
    gradient_check(&store, 1e-5, |g, s| {
        let out = model.forward(g, s, &input)?;
        match out.frames {
            Some(f) => g.concat_rows(&[f, out.utterance]),
            None => Ok(out.utterance),
        }
    })
}
