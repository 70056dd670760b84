use std::path::Path;

use crate::error::{Error, Result};

/// Mono 16-bit PCM samples scaled to [-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Wave {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Wave {
    /// Errors unless the file is mono 16-bit integer PCM at `expected_rate`.
    pub fn read(path: &Path, expected_rate: u32) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::Range(format!(
                "{}: expected mono 16-bit PCM, got {} channel(s) at {} bits",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        if spec.sample_rate != expected_rate {
            return Err(Error::SampleRate {
                expected: expected_rate,
                actual: spec.sample_rate,
            });
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            sample_rate: spec.sample_rate,
            samples,
        })
    }

    /// Samples are clipped to the 16-bit range.
    pub fn write(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v)?;
        }
        w.finalize()?;
        Ok(())
    }
}
