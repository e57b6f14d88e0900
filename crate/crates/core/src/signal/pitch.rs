use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::{hann_window, FrameGrid, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub floor_hz: f64,
    pub ceil_hz: f64,
    pub frame_ms: f64,
    pub voicing_threshold: f64,
    /// Penalty per octave of lag, favouring the shortest period among peaks
    /// of near-equal height.
    pub octave_cost: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            floor_hz: 60.0,
            ceil_hz: 400.0,
            frame_ms: 40.0,
            voicing_threshold: 0.45,
            octave_cost: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContourState {
    /// Raw estimates; unvoiced frames hold 0.
    Raw,
    /// Gaps filled and smoothed.
    Smoothed,
    /// No voiced frame existed, so nothing could be interpolated.
    AllUnvoiced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub grid: FrameGrid,
    pub state: ContourState,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }
}

struct Autocorrelator {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl Autocorrelator {
    fn new(n: usize) -> Self {
        let size = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        Autocorrelator {
            n,
            fft: planner.plan_fft_forward(size),
            ifft: planner.plan_fft_inverse(size),
            buf: vec![Complex::new(0.0, 0.0); size],
        }
    }

    /// Linear autocorrelation for lags `0..=max_lag`.
    fn run(&mut self, x: &[f64], max_lag: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let size = self.buf.len();
        for (i, c) in self.buf.iter_mut().enumerate() {
            *c = Complex::new(if i < x.len() { x[i] } else { 0.0 }, 0.0);
        }
        self.fft.process(&mut self.buf);
        for c in self.buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.ifft.process(&mut self.buf);
        self.buf[..=max_lag]
            .iter()
            .map(|c| c.re / size as f64)
            .collect()
    }
}

/// Autocorrelation pitch estimate on each frame of `grid`. Each analysis
/// frame is a Hann-windowed, mean-removed segment of `frame_ms` centred on
/// the grid frame centre; samples outside the waveform count as zero.
pub fn estimate_f0(wave: &Waveform, cfg: &PitchConfig, grid: &FrameGrid) -> Result<PitchTrack> {
    let sr = wave.sample_rate() as f64;
    if !(cfg.floor_hz > 0.0 && cfg.floor_hz < cfg.ceil_hz && cfg.ceil_hz < sr / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "pitch range {}..{} Hz invalid for {} Hz audio",
            cfg.floor_hz, cfg.ceil_hz, sr
        )));
    }
    if grid.sample_rate != wave.sample_rate() || grid.hop == 0 {
        return Err(Error::InvalidArgument(
            "frame grid does not match the waveform".into(),
        ));
    }
    let n = (cfg.frame_ms * sr / 1000.0).round() as usize;
    let min_lag = ((sr / cfg.ceil_hz).floor() as usize).max(2);
    let max_lag = (sr / cfg.floor_hz).ceil() as usize;
    if 2 * max_lag > n {
        return Err(Error::InvalidArgument(format!(
            "{} ms frame cannot hold two periods of {} Hz",
            cfg.frame_ms, cfg.floor_hz
        )));
    }

    let window = hann_window(n);
    let mut ac = Autocorrelator::new(n);
    let rw = ac.run(&window, max_lag + 1);
    let x = wave.samples();
    let half = n / 2;
    let mut seg = vec![0.0; n];
    let mut f0 = Vec::with_capacity(grid.n_frames);
    let mut voiced = Vec::with_capacity(grid.n_frames);
    for i in 0..grid.n_frames {
        let start = grid.center_sample(i) as isize - half as isize;
        for (k, s) in seg.iter_mut().enumerate() {
            let idx = start + k as isize;
            *s = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize]
            } else {
                0.0
            };
        }
        let mean = seg.iter().sum::<f64>() / n as f64;
        for (s, w) in seg.iter_mut().zip(&window) {
            *s = (*s - mean) * w;
        }
        let rx = ac.run(&seg, max_lag + 1);
        let estimate = if rx[0] <= 1e-12 {
            None
        } else {
            let r: Vec<f64> = (0..=max_lag + 1)
                .map(|t| (rx[t] / rx[0]) / (rw[t] / rw[0]))
                .collect();
            best_peak(&r, min_lag, max_lag, sr, cfg)
        };
        match estimate {
            Some((lag, height)) if height > cfg.voicing_threshold => {
                f0.push(sr / lag);
                voiced.push(true);
            }
            _ => {
                f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    Ok(PitchTrack {
        f0,
        voiced,
        grid: *grid,
        state: ContourState::Raw,
    })
}

/// Highest-scoring local maximum of `r` in `[min_lag, max_lag]`, refined by
/// parabolic interpolation. Returns the fractional lag and the peak height.
fn best_peak(
    r: &[f64],
    min_lag: usize,
    max_lag: usize,
    sr: f64,
    cfg: &PitchConfig,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for t in min_lag..=max_lag {
        let (a, b, c) = (r[t - 1], r[t], r[t + 1]);
        if !(b > a && b >= c) {
            continue;
        }
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-15 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let height = b - 0.25 * (a - c) * shift;
        let lag = t as f64 + shift;
        let score = height - cfg.octave_cost * (cfg.floor_hz * lag / sr).log2();
        if best.is_none_or(|(_, _, s)| score > s) {
            best = Some((lag, height, score));
        }
    }
    best.map(|(lag, height, _)| (lag, height))
}

/// Fills unvoiced gaps (linear between voiced neighbours, held at the edges)
/// then applies a 5-point median and a 3-point moving average with clamped
/// edges. Voicing flags are kept as they were.
pub fn interpolate_and_smooth(track: &PitchTrack) -> PitchTrack {
    let n = track.f0.len();
    let voiced_idx: Vec<usize> = (0..n).filter(|&i| track.voiced[i]).collect();
    if voiced_idx.is_empty() {
        return PitchTrack {
            state: ContourState::AllUnvoiced,
            ..track.clone()
        };
    }
    let mut filled = vec![0.0; n];
    let mut next = 0;
    for (i, slot) in filled.iter_mut().enumerate() {
        while next < voiced_idx.len() && voiced_idx[next] < i {
            next += 1;
        }
        *slot = if next < voiced_idx.len() && voiced_idx[next] == i {
            track.f0[i]
        } else if next == 0 {
            track.f0[voiced_idx[0]]
        } else if next == voiced_idx.len() {
            track.f0[voiced_idx[next - 1]]
        } else {
            let (l, r) = (voiced_idx[next - 1], voiced_idx[next]);
            let frac = (i - l) as f64 / (r - l) as f64;
            track.f0[l] + frac * (track.f0[r] - track.f0[l])
        };
    }
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let median: Vec<f64> = (0..n as isize)
        .map(|i| {
            let mut w: Vec<f64> = (-2..=2).map(|d| filled[clamp(i + d)]).collect();
            w.sort_by(f64::total_cmp);
            w[2]
        })
        .collect();
    let smooth = (0..n as isize)
        .map(|i| (-1..=1).map(|d| median[clamp(i + d)]).sum::<f64>() / 3.0)
        .collect();
    PitchTrack {
        f0: smooth,
        voiced: track.voiced.clone(),
        grid: track.grid,
        state: ContourState::Smoothed,
    }
}
