use std::collections::BTreeMap;

use rand::Rng;

use super::{CellKind, Graph, LayerConfig, Mode, ParameterStore, Sequential, Tensor, Var};
use crate::error::Result;
use crate::util;

/// Maximum relative error between analytic and central-difference
/// gradients, per parameter.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max: f64,
    pub checked_scalars: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.as_str(), *v))
    }
}

/// Denominator floor. Central differences at `eps = 1e-5` carry roundoff
/// near `1e-11`, so smaller gradients are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(RELATIVE_FLOOR, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of every stored parameter against
/// central finite differences with step `eps`.
///
/// `forward` builds the computation on an eval-mode graph; its output is
/// reduced to a scalar by a fixed random projection so every output element
/// contributes.
pub fn gradient_check<F>(store: &ParameterStore, eps: f64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new(Mode::Eval, 0);
    let out = forward(&mut g, store)?;
    let shape = g.shape(out).to_vec();
    let mut rng = util::rng(0x6772_6164);
    let n: usize = shape.iter().product();
    let projection = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let grads = g.backward(out, &projection)?;

    let objective = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::untracked(Mode::Eval, 0);
        let out = forward(&mut g, s)?;
        Ok(g.value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut work = store.clone();
    let mut per_param = BTreeMap::new();
    let mut checked = 0;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let zeros;
        let analytic = match grads.param(&name) {
            Some(t) => t,
            None => {
                zeros = Tensor::zeros(store.get(&name)?.shape());
                &zeros
            }
        };
        let mut worst: f64 = 0.0;
        for i in 0..analytic.len() {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + eps;
            let plus = objective(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - eps;
            let minus = objective(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            checked += 1;
        }
        per_param.insert(name, worst);
    }
    let max = per_param.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max,
        checked_scalars: checked,
    })
}

/// Gradient checks for every layer type at small sizes. Each parameter-free
/// layer sits behind a linear layer so its input gradient is exercised.
pub fn layer_gradient_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = util::rng(util::mix_seed(&[seed, 0x6c61_7965]));
    let mut uniform = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    };
    let linear = |input, output| LayerConfig::Linear { input, output };
    let conv = |in_channels, out_channels, kernel, stride| LayerConfig::Conv2d {
        in_channels,
        out_channels,
        kernel,
        stride,
    };
    let ids = Tensor::vector(vec![0.0, 3.0, 1.0, 3.0, 2.0]);
    let cases: Vec<(&str, Vec<LayerConfig>, Tensor)> = vec![
        (
            "linear",
            vec![linear(4, 3), linear(3, 2)],
            uniform(&[5, 4])?,
        ),
        (
            "relu",
            vec![linear(4, 6), LayerConfig::Relu, linear(6, 2)],
            uniform(&[5, 4])?,
        ),
        (
            "dropout",
            vec![linear(4, 3), LayerConfig::Dropout { p: 0.3 }, linear(3, 2)],
            uniform(&[5, 4])?,
        ),
        (
            "mean-pool",
            vec![linear(4, 3), LayerConfig::MeanPoolTime, linear(3, 2)],
            uniform(&[5, 4])?,
        ),
        (
            "embedding",
            vec![LayerConfig::Embedding { vocab: 4, dim: 3 }, linear(3, 2)],
            ids,
        ),
        (
            "conv2d",
            vec![conv(1, 2, (3, 3), (1, 1)), conv(2, 3, (3, 3), (1, 3))],
            uniform(&[1, 6, 7])?,
        ),
        (
            "gru",
            vec![
                linear(3, 3),
                LayerConfig::Gru {
                    input: 3,
                    hidden: 4,
                },
            ],
            uniform(&[6, 3])?,
        ),
        (
            "lstm",
            vec![
                linear(3, 3),
                LayerConfig::Lstm {
                    input: 3,
                    hidden: 4,
                },
            ],
            uniform(&[6, 3])?,
        ),
        (
            "bigru",
            vec![
                linear(3, 3),
                LayerConfig::Bidirectional {
                    cell: CellKind::Gru,
                    input: 3,
                    hidden: 2,
                },
            ],
            uniform(&[6, 3])?,
        ),
        (
            "bilstm",
            vec![
                linear(3, 3),
                LayerConfig::Bidirectional {
                    cell: CellKind::Lstm,
                    input: 3,
                    hidden: 2,
                },
            ],
            uniform(&[6, 3])?,
        ),
    ];
    cases
        .into_iter()
        .map(|(name, configs, input)| {
            let mut store = ParameterStore::new(seed);
            let net = Sequential::build(name, configs, &mut store)?;
            store.randomize(util::mix_seed(&[seed, 1]), 0.8);
            let report = gradient_check(&store, 1e-5, |g, s| {
                let x = g.constant(input.clone());
                net.forward(g, s, x)
            })?;
            Ok((name.to_string(), report))
        })
        .collect()
}
