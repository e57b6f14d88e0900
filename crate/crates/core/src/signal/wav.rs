use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a 16-bit PCM mono RIFF file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let fail = |detail: String| Error::format("wav", format!("{}: {detail}", path.display()));
    let reader = hound::WavReader::open(path).map_err(|e| fail(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(fail(format!(
            "expected mono, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(fail(format!(
            "expected 16-bit PCM, found {:?} with {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fail(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| fail(e.to_string()))
}

/// Writes a waveform as 16-bit PCM mono, rounding to the nearest level.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let fail = |e: hound::Error| Error::format("wav", format!("{}: {e}", path.display()));
    let mut writer = WavWriter::create(path, spec).map_err(fail)?;
    for &s in wave.samples() {
        let level = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(level).map_err(fail)?;
    }
    writer.finalize().map_err(fail)
}
