//! Layer set shared by every model.
//!
//! All sequence layers take `[T, features]` matrices. Weight matrices are
//! stored input-major (`[in, out]`) so a layer computes `x · W + b`.
//!
//! Recurrent cells follow the usual formulations:
//!
//! GRU (gates ordered reset, update, candidate):
//! ```text
//! r  = σ(x W_r + b_ir + h U_r + b_hr)
//! z  = σ(x W_z + b_iz + h U_z + b_hz)
//! n  = tanh(x W_n + b_in + r ⊙ (h U_n + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! LSTM (gates ordered input, forget, cell, output):
//! ```text
//! i = σ(..), f = σ(..), g = tanh(..), o = σ(..)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use serde::{Deserialize, Serialize};

use super::store::Init;
use super::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerConfig {
    Linear {
        input: usize,
        output: usize,
    },
    Embedding {
        vocab: usize,
        dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Gru {
        input: usize,
        hidden: usize,
    },
    Lstm {
        input: usize,
        hidden: usize,
    },
    Bidirectional {
        cell: CellKind,
        input: usize,
        hidden: usize,
    },
    Relu,
    Dropout {
        p: f64,
    },
    MeanPoolTime,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims: &[usize] = match self {
            LayerConfig::Linear { input, output } => &[*input, *output],
            LayerConfig::Embedding { vocab, dim } => &[*vocab, *dim],
            LayerConfig::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => &[
                *in_channels,
                *out_channels,
                kernel.0,
                kernel.1,
                stride.0,
                stride.1,
            ],
            LayerConfig::Gru { input, hidden }
            | LayerConfig::Lstm { input, hidden }
            | LayerConfig::Bidirectional { input, hidden, .. } => &[*input, *hidden],
            LayerConfig::Dropout { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(Error::Config(format!(
                        "dropout probability {p} not in [0,1)"
                    )));
                }
                &[]
            }
            LayerConfig::Relu | LayerConfig::MeanPoolTime => &[],
        };
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero dimension in {self:?}")));
        }
        Ok(())
    }

    /// Feature width produced for an input of width `input` (channels for conv).
    pub fn output_dim(&self, input: usize) -> usize {
        match self {
            LayerConfig::Linear { output, .. } => *output,
            LayerConfig::Embedding { dim, .. } => *dim,
            LayerConfig::Conv2d { out_channels, .. } => *out_channels,
            LayerConfig::Gru { hidden, .. } | LayerConfig::Lstm { hidden, .. } => *hidden,
            LayerConfig::Bidirectional { hidden, .. } => 2 * hidden,
            LayerConfig::Relu | LayerConfig::Dropout { .. } | LayerConfig::MeanPoolTime => input,
        }
    }
}

/// Instantiated layer bound to parameter names in a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub config: LayerConfig,
}

impl Layer {
    /// Validates `config` and registers its parameters under `name`.
    pub fn build(name: &str, config: LayerConfig, store: &mut ParameterStore) -> Result<Self> {
        config.validate()?;
        match &config {
            LayerConfig::Linear { input, output } => {
                store.register(
                    &format!("{name}.weight"),
                    &[*input, *output],
                    Init::Glorot {
                        fan_in: *input,
                        fan_out: *output,
                    },
                )?;
                store.register(&format!("{name}.bias"), &[*output], Init::Zeros)?;
            }
            LayerConfig::Embedding { vocab, dim } => {
                store.register(
                    &format!("{name}.table"),
                    &[*vocab, *dim],
                    Init::Embedding { dim: *dim },
                )?;
            }
            LayerConfig::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let area = kernel.0 * kernel.1;
                store.register(
                    &format!("{name}.weight"),
                    &[*out_channels, *in_channels, kernel.0, kernel.1],
                    Init::He {
                        fan_in: in_channels * area,
                    },
                )?;
                store.register(&format!("{name}.bias"), &[*out_channels], Init::Zeros)?;
            }
            LayerConfig::Gru { input, hidden } => {
                register_cell(store, name, CellKind::Gru, *input, *hidden)?
            }
            LayerConfig::Lstm { input, hidden } => {
                register_cell(store, name, CellKind::Lstm, *input, *hidden)?
            }
            LayerConfig::Bidirectional {
                cell,
                input,
                hidden,
            } => {
                register_cell(store, &format!("{name}.fwd"), *cell, *input, *hidden)?;
                register_cell(store, &format!("{name}.bwd"), *cell, *input, *hidden)?;
            }
            LayerConfig::Relu | LayerConfig::Dropout { .. } | LayerConfig::MeanPoolTime => {}
        }
        Ok(Layer {
            name: name.to_string(),
            config,
        })
    }

    /// Runs the layer. Embedding layers read integer ids from a `[T]` or
    /// `[T, 1]` constant.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let out = self
            .forward_inner(g, store, x)
            .map_err(|e| e.in_layer(&self.name))?;
        g.check_finite(out, &self.name)?;
        Ok(out)
    }

    fn expect_width(&self, g: &Graph, x: Var, width: usize) -> Result<()> {
        match g.value(x).dims2() {
            Some((_, w)) if w == width => Ok(()),
            _ => Err(Error::shape(
                self.name.clone(),
                format!("expected [T, {width}] input, got {:?}", g.shape(x)),
            )),
        }
    }

    fn forward_inner(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let name = &self.name;
        match &self.config {
            LayerConfig::Linear { input, .. } => {
                self.expect_width(g, x, *input)?;
                let w = g.param(store, &format!("{name}.weight"))?;
                let b = g.param(store, &format!("{name}.bias"))?;
                let xw = g.matmul(x, w)?;
                g.add_bias(xw, b)
            }
            LayerConfig::Embedding { .. } => {
                let ids = ids_from(g.value(x), name)?;
                let table = g.param(store, &format!("{name}.table"))?;
                g.embedding(table, &ids)
            }
            LayerConfig::Conv2d {
                in_channels,
                kernel,
                stride,
                ..
            } => {
                let s = g.shape(x);
                if s.len() != 3 || s[0] != *in_channels {
                    return Err(Error::shape(
                        name.clone(),
                        format!("expected [{in_channels}, H, W] input, got {s:?}"),
                    ));
                }
                let w = g.param(store, &format!("{name}.weight"))?;
                let b = g.param(store, &format!("{name}.bias"))?;
                g.conv2d(x, w, b, *stride, (kernel.0 / 2, kernel.1 / 2))
            }
            LayerConfig::Gru { input, hidden } => {
                self.expect_width(g, x, *input)?;
                run_cell(g, store, name, CellKind::Gru, *hidden, x)
            }
            LayerConfig::Lstm { input, hidden } => {
                self.expect_width(g, x, *input)?;
                run_cell(g, store, name, CellKind::Lstm, *hidden, x)
            }
            LayerConfig::Bidirectional {
                cell,
                input,
                hidden,
            } => {
                self.expect_width(g, x, *input)?;
                let fwd = run_cell(g, store, &format!("{name}.fwd"), *cell, *hidden, x)?;
                let rev = g.reverse_rows(x)?;
                let bwd_rev = run_cell(g, store, &format!("{name}.bwd"), *cell, *hidden, rev)?;
                let bwd = g.reverse_rows(bwd_rev)?;
                g.concat_cols(&[fwd, bwd])
            }
            LayerConfig::Relu => Ok(g.relu(x)),
            LayerConfig::Dropout { p } => g.dropout(x, *p),
            LayerConfig::MeanPoolTime => g.mean_rows(x),
        }
    }
}

fn ids_from(t: &Tensor, layer: &str) -> Result<Vec<usize>> {
    if !matches!(t.shape(), [_] | [_, 1]) {
        return Err(Error::shape(
            layer,
            format!("embedding ids must be [T] or [T,1], got {:?}", t.shape()),
        ));
    }
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::shape(
                    layer,
                    format!("embedding id {v} is not a non-negative integer"),
                ))
            }
        })
        .collect()
}

fn register_cell(
    store: &mut ParameterStore,
    prefix: &str,
    cell: CellKind,
    input: usize,
    hidden: usize,
) -> Result<()> {
    let gh = cell.gates() * hidden;
    store.register(
        &format!("{prefix}.w_ih"),
        &[input, gh],
        Init::Glorot {
            fan_in: input,
            fan_out: hidden,
        },
    )?;
    store.register(
        &format!("{prefix}.w_hh"),
        &[hidden, gh],
        Init::Glorot {
            fan_in: hidden,
            fan_out: hidden,
        },
    )?;
    store.register(&format!("{prefix}.b_ih"), &[gh], Init::Zeros)?;
    store.register(&format!("{prefix}.b_hh"), &[gh], Init::Zeros)?;
    Ok(())
}

/// Unrolls one recurrent direction over the rows of `x`, returning `[T, H]`.
fn run_cell(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    cell: CellKind,
    hidden: usize,
    x: Var,
) -> Result<Var> {
    let w_ih = g.param(store, &format!("{prefix}.w_ih"))?;
    let w_hh = g.param(store, &format!("{prefix}.w_hh"))?;
    let b_ih = g.param(store, &format!("{prefix}.b_ih"))?;
    let b_hh = g.param(store, &format!("{prefix}.b_hh"))?;
    let steps = g.shape(x)[0];
    let h_dim = hidden;
    // input projections for all steps at once
    let xw = g.matmul(x, w_ih)?;
    let xp = g.add_bias(xw, b_ih)?;
    let mut h = g.constant(Tensor::zeros(&[1, h_dim]));
    let mut c = g.constant(Tensor::zeros(&[1, h_dim]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.slice_rows(xp, t, t + 1)?;
        let hw = g.matmul(h, w_hh)?;
        let hp = g.add_bias(hw, b_hh)?;
        match cell {
            CellKind::Gru => {
                let xrz = g.slice_cols(xt, 0, 2 * h_dim)?;
                let hrz = g.slice_cols(hp, 0, 2 * h_dim)?;
                let pre = g.add(xrz, hrz)?;
                let rz = g.sigmoid(pre);
                let r = g.slice_cols(rz, 0, h_dim)?;
                let z = g.slice_cols(rz, h_dim, 2 * h_dim)?;
                let xn = g.slice_cols(xt, 2 * h_dim, 3 * h_dim)?;
                let hn = g.slice_cols(hp, 2 * h_dim, 3 * h_dim)?;
                let gated = g.mul(r, hn)?;
                let npre = g.add(xn, gated)?;
                let n = g.tanh(npre);
                // h' = n + z ⊙ (h − n)
                let diff = g.sub(h, n)?;
                let zd = g.mul(z, diff)?;
                h = g.add(n, zd)?;
            }
            CellKind::Lstm => {
                let pre = g.add(xt, hp)?;
                let ifo_pre = g.slice_cols(pre, 0, 2 * h_dim)?;
                let if_gates = g.sigmoid(ifo_pre);
                let i_gate = g.slice_cols(if_gates, 0, h_dim)?;
                let f_gate = g.slice_cols(if_gates, h_dim, 2 * h_dim)?;
                let g_pre = g.slice_cols(pre, 2 * h_dim, 3 * h_dim)?;
                let g_gate = g.tanh(g_pre);
                let o_pre = g.slice_cols(pre, 3 * h_dim, 4 * h_dim)?;
                let o_gate = g.sigmoid(o_pre);
                let fc = g.mul(f_gate, c)?;
                let ig = g.mul(i_gate, g_gate)?;
                c = g.add(fc, ig)?;
                let tc = g.tanh(c);
                h = g.mul(o_gate, tc)?;
            }
        }
        outputs.push(h);
    }
    g.concat_rows(&outputs)
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    /// Builds `configs` as `{prefix}.{index}` layers.
    pub fn build(
        prefix: &str,
        configs: Vec<LayerConfig>,
        store: &mut ParameterStore,
    ) -> Result<Self> {
        let layers = configs
            .into_iter()
            .enumerate()
            .map(|(i, cfg)| Layer::build(&format!("{prefix}.{i}"), cfg, store))
            .collect::<Result<_>>()?;
        Ok(Sequential { layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, store, x)?;
        }
        Ok(x)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}
