//! 16-bit PCM mono WAV read/write, the only audio container this project
//! uses. Container handling is delegated to `hound`; these wrappers pin the
//! format and convert between i16 samples and f64 in [-1, 1].

use std::path::Path;

use thiserror::Error;

use crate::features::Waveform;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("unsupported format: {0} (need 16-bit PCM mono)")]
    Unsupported(String),
    #[error(transparent)]
    Container(#[from] hound::Error),
}

const SCALE: f64 = 32767.0;

/// Write samples as 16-bit PCM mono. Values are clamped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), WavError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * SCALE).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Read a 16-bit PCM mono WAV; anything else is rejected.
pub fn read_wav(path: &Path) -> Result<Waveform, WavError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(WavError::Unsupported(format!("{} channels", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(WavError::Unsupported(format!(
            "{} {:?} samples",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples: Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    Ok(Waveform {
        samples: samples?.into_iter().map(|s| s as f64 / SCALE).collect(),
        sample_rate: spec.sample_rate,
    })
}
