use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::stft::{Frame, Stft};
use crate::analysis::MacTally;
use crate::error::{Error, Result};
use crate::fxp::{FxpCheckpoint, FxpState, OverflowPolicy, Overflows};
use crate::s5::{CompiledModel, ModelState};

/// Streaming execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// One frame per step, state carried across frames.
    FallThrough,
    /// `c` frames per call.
    Chunked(usize),
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "fall-through" {
            return Ok(Mode::FallThrough);
        }
        if let Some(n) = s.strip_prefix("chunked:") {
            let c: usize = n
                .parse()
                .map_err(|_| Error::Range(format!("bad chunk size in `{s}`")))?;
            if c == 0 {
                return Err(Error::Range("chunk size must be positive".into()));
            }
            return Ok(Mode::Chunked(c));
        }
        Err(Error::Range(format!("unknown mode `{s}`")))
    }
}

/// A causal frame-to-mask model.
pub trait FrameModel {
    fn n_input(&self) -> usize;
    fn reset(&mut self);
    fn step(&mut self, features: &[f64]) -> Result<Vec<f64>>;
    /// Several consecutive frames; must match repeated [`FrameModel::step`].
    fn chunk(&mut self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        features.iter().map(|f| self.step(f)).collect()
    }
}

/// Float reference model with carried state; chunks run through the
/// sequence-parallel scan.
pub struct FloatStream<'a> {
    pub model: &'a CompiledModel,
    state: ModelState,
    pub tally: MacTally,
}

impl<'a> FloatStream<'a> {
    pub fn new(model: &'a CompiledModel) -> Self {
        Self {
            state: model.zero_state(),
            tally: model.new_tally(),
            model,
        }
    }
}

impl FrameModel for FloatStream<'_> {
    fn n_input(&self) -> usize {
        self.model.n_input
    }

    fn reset(&mut self) {
        self.state.reset();
    }

    fn step(&mut self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.step(&mut self.state, features, &mut self.tally)?.output)
    }

    fn chunk(&mut self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let scan_chunk = (features.len() / 4).max(1);
        let taps = self
            .model
            .run_scan_with(&mut self.state, features, scan_chunk, &mut self.tally)?;
        Ok(taps.into_iter().map(|t| t.output).collect())
    }
}

/// Integer runtime with carried state. Execution is always sequential.
pub struct FxpStream<'a> {
    pub ckpt: &'a FxpCheckpoint,
    pub policy: OverflowPolicy,
    state: FxpState,
    pub overflows: Overflows,
    pub tally: MacTally,
}

impl<'a> FxpStream<'a> {
    pub fn new(ckpt: &'a FxpCheckpoint, policy: OverflowPolicy) -> Self {
        Self {
            state: ckpt.zero_state(),
            overflows: Overflows::default(),
            tally: ckpt.new_tally(),
            ckpt,
            policy,
        }
    }
}

impl FrameModel for FxpStream<'_> {
    fn n_input(&self) -> usize {
        self.ckpt.spec.n_input
    }

    fn reset(&mut self) {
        self.state = self.ckpt.zero_state();
    }

    fn step(&mut self, features: &[f64]) -> Result<Vec<f64>> {
        let q = self.ckpt.quantize_input(features)?;
        let taps = self
            .ckpt
            .step(&mut self.state, &q, self.policy, &mut self.overflows, &mut self.tally)?;
        self.ckpt.dequantize_output(&taps.output)
    }
}

/// Output of a denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub wave: Vec<f64>,
    /// Model compute time per frame (per chunk share in chunked mode).
    pub frame_times: Vec<Duration>,
}

fn clamp_mask(m: f64, mask_max: f64) -> f64 {
    if m.is_nan() {
        0.0
    } else {
        m.clamp(0.0, mask_max)
    }
}

/// Mask-based denoising: magnitude in, clamped real mask out, noisy phase
/// reused, overlap-add resynthesis. Output has the input's length.
pub fn denoise_stream(
    stft: &Stft,
    model: &mut dyn FrameModel,
    noisy: &[f64],
    sample_rate: u32,
    mode: Mode,
) -> Result<Denoised> {
    let cfg = stft.config();
    if sample_rate != cfg.sample_rate {
        return Err(Error::SampleRate {
            expected: cfg.sample_rate,
            actual: sample_rate,
        });
    }
    if model.n_input() != cfg.bins() {
        return Err(Error::Dimension(format!(
            "model takes {} features, STFT yields {} bins",
            model.n_input(),
            cfg.bins()
        )));
    }
    let frames = stft.stft(noisy)?;
    let features: Vec<Vec<f64>> = frames.iter().map(Frame::magnitude).collect();
    model.reset();

    let mut masks = Vec::with_capacity(frames.len());
    let mut frame_times = Vec::with_capacity(frames.len());
    match mode {
        Mode::FallThrough => {
            for f in &features {
                let t0 = Instant::now();
                masks.push(model.step(f)?);
                frame_times.push(t0.elapsed());
            }
        }
        Mode::Chunked(c) => {
            for block in features.chunks(c.max(1)) {
                let t0 = Instant::now();
                masks.extend(model.chunk(block)?);
                let share = t0.elapsed() / block.len() as u32;
                frame_times.extend(std::iter::repeat(share).take(block.len()));
            }
        }
    }

    let masked: Vec<Frame> = frames
        .iter()
        .zip(&masks)
        .map(|(f, m)| Frame {
            spectrum: f
                .spectrum
                .iter()
                .zip(m)
                .map(|(c, &g)| c * clamp_mask(g, cfg.mask_max))
                .collect(),
        })
        .collect();
    Ok(Denoised {
        wave: stft.istft(&masked, noisy.len()),
        frame_times,
    })
}

/// Analysis/synthesis only (mask identically one).
pub fn round_trip(stft: &Stft, wave: &[f64]) -> Result<Vec<f64>> {
    let frames = stft.stft(wave)?;
    Ok(stft.istft(&frames, wave.len()))
}

/// Tuning of [`SpectralFloor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralFloorConfig {
    /// Minimum-search window in frames.
    pub window: usize,
    /// Recursive power smoothing factor.
    pub smoothing: f64,
    /// Compensates the downward bias of a minimum over a window.
    pub bias: f64,
    /// Decision-directed a-priori SNR smoothing.
    pub dd: f64,
    /// Lowest gain applied to any bin.
    pub floor_gain: f64,
}

impl Default for SpectralFloorConfig {
    fn default() -> Self {
        Self {
            window: 96,
            smoothing: 0.7,
            bias: 2.0,
            dd: 0.9,
            floor_gain: 0.2,
        }
    }
}

/// Training-free spectral-floor mask. A per-bin noise floor is tracked as the
/// bias-compensated minimum of recursively smoothed power over a sliding
/// window; each bin then gets a Wiener gain from a decision-directed a-priori
/// SNR estimate, bounded below by `floor_gain`.
pub struct SpectralFloor {
    bins: usize,
    cfg: SpectralFloorConfig,
    smoothed: Vec<f64>,
    history: VecDeque<Vec<f64>>,
    prev_clean: Vec<f64>,
    frames: usize,
}

impl SpectralFloor {
    pub fn new(bins: usize) -> Self {
        Self::with_config(bins, SpectralFloorConfig::default())
    }

    pub fn with_config(bins: usize, cfg: SpectralFloorConfig) -> Self {
        Self {
            bins,
            cfg,
            smoothed: vec![0.0; bins],
            history: VecDeque::with_capacity(cfg.window),
            prev_clean: vec![0.0; bins],
            frames: 0,
        }
    }
}

impl FrameModel for SpectralFloor {
    fn n_input(&self) -> usize {
        self.bins
    }

    fn reset(&mut self) {
        self.smoothed.iter_mut().for_each(|v| *v = 0.0);
        self.prev_clean.iter_mut().for_each(|v| *v = 0.0);
        self.history.clear();
        self.frames = 0;
    }

    fn step(&mut self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.bins {
            return Err(Error::Dimension("spectral floor bin count".into()));
        }
        let c = self.cfg;
        let a = if self.frames == 0 { 0.0 } else { c.smoothing };
        for (s, &m) in self.smoothed.iter_mut().zip(features) {
            *s = a * *s + (1.0 - a) * m * m;
        }
        if self.history.len() == c.window.max(1) {
            self.history.pop_front();
        }
        self.history.push_back(self.smoothed.clone());
        self.frames += 1;

        let mut gains = Vec::with_capacity(self.bins);
        for k in 0..self.bins {
            let floor = self.history.iter().map(|h| h[k]).fold(f64::INFINITY, f64::min);
            let noise = (c.bias * floor).max(1e-20);
            let power = features[k] * features[k];
            let post = power / noise;
            let prio = c.dd * self.prev_clean[k] / noise + (1.0 - c.dd) * (post - 1.0).max(0.0);
            let g = (prio / (1.0 + prio)).max(c.floor_gain);
            self.prev_clean[k] = g * g * power;
            gains.push(g);
        }
        Ok(gains)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        assert_eq!("fall-through".parse::<Mode>().unwrap(), Mode::FallThrough);
        assert_eq!("chunked:16".parse::<Mode>().unwrap(), Mode::Chunked(16));
        assert!("chunked:0".parse::<Mode>().is_err());
        assert!("batch".parse::<Mode>().is_err());
    }

    #[test]
    fn mask_clamp() {
        assert_eq!(clamp_mask(-1.0, 2.0), 0.0);
        assert_eq!(clamp_mask(3.0, 2.0), 2.0);
        assert_eq!(clamp_mask(f64::NAN, 2.0), 0.0);
        assert_eq!(clamp_mask(0.5, 2.0), 0.5);
    }
}
