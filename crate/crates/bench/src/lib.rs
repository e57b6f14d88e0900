//! Deterministic inputs shared by the benchmarks.

use std::f64::consts::PI;

use mosaware::signal::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLE_RATE: u32 = 16_000;

/// A harmonic complex at `f0` with 1/k amplitudes.
pub fn harmonic_tone(f0: f64, seconds: f64, harmonics: usize) -> Waveform {
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            (1..=harmonics)
                .map(|k| (2.0 * PI * k as f64 * f0 * t).sin() / k as f64)
                .sum::<f64>()
                * 0.3
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE).expect("non-empty waveform")
}

/// `n` uniform scores in [1, 5].
pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(1.0..5.0)).collect()
}

/// `n` integer ratings in 1..=5, heavy in ties.
pub fn ratings(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(1..=5) as f64).collect()
}
