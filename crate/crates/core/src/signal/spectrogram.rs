use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{FrameGrid, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames × bins magnitude matrix with its analysis metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window: String,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.bins..(i + 1) * self.bins]
    }

    pub fn grid(&self) -> FrameGrid {
        FrameGrid {
            sample_rate: self.sample_rate,
            hop: self.hop,
            first_center: self.fft_size / 2,
            n_frames: self.frames,
        }
    }

    /// `log(1 + |X|)` as a `[frames, bins]` tensor, the model input.
    pub fn log_magnitude(&self) -> Tensor {
        Tensor::matrix(
            self.frames,
            self.bins,
            self.data.iter().map(|v| v.ln_1p()).collect(),
        )
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed short-time magnitude spectrum. Frames start every `hop`
/// samples; the final frame is completed by reflecting the signal about its
/// last sample, so the frame count is `1 + ceil((len - fft_size) / hop)`.
pub fn magnitude_spectrogram(wave: &Waveform, fft_size: usize, hop: usize) -> Result<Spectrogram> {
    if !fft_size.is_power_of_two() || fft_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "fft size {fft_size} is not a power of two"
        )));
    }
    if hop == 0 || hop > fft_size {
        return Err(Error::InvalidArgument(format!(
            "hop {hop} must be in 1..={fft_size}"
        )));
    }
    let x = wave.samples();
    let len = x.len();
    if len < fft_size {
        return Err(Error::InvalidArgument(format!(
            "waveform of {len} samples is shorter than one {fft_size}-sample window"
        )));
    }
    let grid = FrameGrid::for_spectrogram(len, wave.sample_rate(), fft_size, hop);
    let bins = fft_size / 2 + 1;
    let window = hann_window(fft_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut data = Vec::with_capacity(grid.n_frames * bins);
    for f in 0..grid.n_frames {
        let start = f * hop;
        for (k, slot) in buf.iter_mut().enumerate() {
            let idx = start + k;
            let idx = if idx < len { idx } else { 2 * (len - 1) - idx };
            *slot = Complex::new(x[idx] * window[k], 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        frames: grid.n_frames,
        bins,
        fft_size,
        hop,
        sample_rate: wave.sample_rate(),
        window: "hann".into(),
        data,
    })
}
