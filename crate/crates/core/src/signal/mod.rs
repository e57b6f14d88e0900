//! Waveform analysis: WAV ingestion, magnitude spectrograms, autocorrelation
//! F0 estimation and contour post-processing.

mod pitch;
mod spectrogram;
mod wav;

pub use pitch::{estimate_f0, interpolate_and_smooth, ContourState, PitchConfig, PitchTrack};
pub use spectrogram::{hann_window, magnitude_spectrogram, Spectrogram};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FFT_SIZE: usize = 512;
pub const DEFAULT_HOP: usize = 256;

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform is empty".into()));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {v} outside [-1, 1]"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis-frame timing shared by spectrogram and pitch frames: frame `i`
/// is centred on sample `first_center + i * hop`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub sample_rate: u32,
    pub hop: usize,
    pub first_center: usize,
    pub n_frames: usize,
}

impl FrameGrid {
    /// Grid of a spectrogram with `fft_size` windows over `len` samples.
    pub fn for_spectrogram(len: usize, sample_rate: u32, fft_size: usize, hop: usize) -> Self {
        let n_frames = if len < fft_size {
            0
        } else {
            1 + (len - fft_size).div_ceil(hop)
        };
        FrameGrid {
            sample_rate,
            hop,
            first_center: fft_size / 2,
            n_frames,
        }
    }

    pub fn center_sample(&self, i: usize) -> usize {
        self.first_center + i * self.hop
    }

    pub fn center_time(&self, i: usize) -> f64 {
        self.center_sample(i) as f64 / self.sample_rate as f64
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}
