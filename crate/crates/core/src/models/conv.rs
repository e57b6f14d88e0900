use serde::{Deserialize, Serialize};

use super::scaled;
use crate::error::{Error, Result};
use crate::tensor::{Graph, LayerConfig, ParameterStore, Sequential, Var};

/// Convolutional front end over a `[T, F]` spectrogram. Each block holds
/// `convs_per_block` 3×3 convolutions with ReLU; the last one strides the
/// frequency axis. Time resolution is preserved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvStackConfig {
    pub input_bins: usize,
    pub channels: Vec<usize>,
    pub convs_per_block: usize,
    pub freq_stride: usize,
}

impl ConvStackConfig {
    pub fn standard(input_bins: usize, divisor: usize) -> Self {
        ConvStackConfig {
            input_bins,
            channels: [16, 32, 64, 128]
                .iter()
                .map(|&c| scaled(c, divisor))
                .collect(),
            convs_per_block: 3,
            freq_stride: 3,
        }
    }

    pub fn output_bins(&self) -> usize {
        self.channels
            .iter()
            .fold(self.input_bins, |f, _| (f - 1) / self.freq_stride + 1)
    }

    /// Width of each flattened output frame.
    pub fn output_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(1) * self.output_bins()
    }

    fn validate(&self) -> Result<()> {
        if self.input_bins == 0
            || self.channels.is_empty()
            || self.convs_per_block == 0
            || self.freq_stride == 0
        {
            return Err(Error::Config(format!("invalid conv stack {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ConvStack {
    pub config: ConvStackConfig,
    layers: Sequential,
}

impl ConvStack {
    pub fn build(
        prefix: &str,
        config: ConvStackConfig,
        store: &mut ParameterStore,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut cin = 1;
        for &cout in &config.channels {
            for k in 0..config.convs_per_block {
                let stride = if k + 1 == config.convs_per_block {
                    (1, config.freq_stride)
                } else {
                    (1, 1)
                };
                layers.push(LayerConfig::Conv2d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: (3, 3),
                    stride,
                });
                layers.push(LayerConfig::Relu);
                cin = cout;
            }
        }
        Ok(ConvStack {
            layers: Sequential::build(prefix, layers, store)?,
            config,
        })
    }

    /// `[T, F]` to `[T, C * F']`, channel-major within each frame.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, spec: Var) -> Result<Var> {
        let s = g.shape(spec).to_vec();
        if s.len() != 2 || s[1] != self.config.input_bins {
            return Err(Error::shape(
                "conv stack",
                format!(
                    "expected [T, {}] spectrogram, got {s:?}",
                    self.config.input_bins
                ),
            ));
        }
        let x = g.reshape(spec, &[1, s[0], s[1]])?;
        let y = self.layers.forward(g, store, x)?;
        let p = g.permute3(y, [1, 0, 2])?;
        g.reshape(p, &[s[0], self.config.output_dim()])
    }
}
