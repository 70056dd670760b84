//! Audio front end: STFT framing, streaming mask-based denoising, WAV I/O
//! and a synthetic noisy-tone generator.

mod denoise;
mod stft;
mod synth;
mod wav;

pub use denoise::{
    denoise_stream, round_trip, Denoised, FloatStream, FrameModel, FxpStream, Mode, SpectralFloor,
    SpectralFloorConfig,
};
pub use stft::{Frame, Stft, StftConfig};
pub use synth::{synth_mixture, Mixture};
pub use wav::Wave;
