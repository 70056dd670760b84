//! Compression and integer inference for diagonal linear recurrent networks
//! used as streaming speech denoisers.
//!
//! The float reference model lives in [`s5`]. [`compressor`] prunes it,
//! [`quant`] calibrates static scales and [`fxp`] freezes it into an
//! integer-only checkpoint. [`analysis`] counts cost and error, [`audio`]
//! wraps a model into an STFT denoiser and [`store`] persists everything.

pub mod analysis;
pub mod audio;
pub mod compressor;
pub mod error;
pub mod fxp;
pub mod quant;
pub mod s5;
pub mod sites;
pub mod store;
pub mod tensors;

pub use error::{Error, Result};
pub use s5::{CompiledModel, ModelSpec, S5Model};
