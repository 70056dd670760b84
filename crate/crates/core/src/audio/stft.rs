use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Framing parameters. Defaults: 16 kHz, 32 ms window, 8 ms hop, 257 bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    /// Upper clamp of the model's multiplicative mask.
    pub mask_max: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 512,
            hop: 128,
            fft_size: 512,
            mask_max: 2.0,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.window_len == 0 {
            return Err(Error::Range("sample rate, window and hop must be positive".into()));
        }
        if self.window_len > self.fft_size {
            return Err(Error::Range("window longer than the FFT".into()));
        }
        if self.window_len % self.hop != 0 {
            return Err(Error::Range(
                "window length must be a multiple of the hop for overlap-add".into(),
            ));
        }
        if !(self.mask_max.is_finite() && self.mask_max > 0.0) {
            return Err(Error::Range("mask_max must be positive".into()));
        }
        Ok(())
    }
}

/// One analysis frame: the non-negative half of the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub spectrum: Vec<Complex64>,
}

impl Frame {
    pub fn magnitude(&self) -> Vec<f64> {
        self.spectrum.iter().map(|c| c.norm()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.spectrum.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Square-root periodic Hann analysis/synthesis pair with overlap-add.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let l = config.window_len;
        let window = (0..l)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / l as f64).cos()).sqrt())
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            window,
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Number of full frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.config.window_len {
            0
        } else {
            (len - self.config.window_len) / self.config.hop + 1
        }
    }

    pub fn analyze(&self, segment: &[f64]) -> Frame {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.config.fft_size];
        for ((b, &x), &w) in buf.iter_mut().zip(segment).zip(&self.window) {
            b.re = x * w;
        }
        self.forward.process(&mut buf);
        buf.truncate(self.config.bins());
        Frame { spectrum: buf }
    }

    /// Windowed time segment of one frame, ready for overlap-add.
    pub fn synthesize(&self, frame: &Frame) -> Vec<f64> {
        let n = self.config.fft_size;
        let bins = self.config.bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..bins].copy_from_slice(&frame.spectrum);
        for k in bins..n {
            buf[k] = frame.spectrum[n - k].conj();
        }
        self.inverse.process(&mut buf);
        buf.iter()
            .zip(&self.window)
            .map(|(c, &w)| c.re / n as f64 * w)
            .collect()
    }

    pub fn stft(&self, wave: &[f64]) -> Result<Vec<Frame>> {
        let l = self.config.window_len;
        if wave.len() < l {
            return Err(Error::TooShort {
                needed: l,
                actual: wave.len(),
            });
        }
        Ok((0..self.frame_count(wave.len()))
            .map(|k| self.analyze(&wave[k * self.config.hop..k * self.config.hop + l]))
            .collect())
    }

    /// Overlap-add with per-sample normalization by the summed window
    /// product; samples no frame covers come out as zero.
    pub fn istft(&self, frames: &[Frame], len: usize) -> Vec<f64> {
        let (l, hop) = (self.config.window_len, self.config.hop);
        let mut out = vec![0.0; len];
        let mut env = vec![0.0; len];
        for (k, f) in frames.iter().enumerate() {
            let seg = self.synthesize(f);
            let start = k * hop;
            for i in 0..l.min(len.saturating_sub(start)) {
                out[start + i] += seg[i];
                env[start + i] += self.window[i] * self.window[i];
            }
        }
        for (o, e) in out.iter_mut().zip(&env) {
            *o = if *e > 1e-8 { *o / e } else { 0.0 };
        }
        out
    }
}
