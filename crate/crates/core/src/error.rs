use thiserror::Error;

/// Errors raised by the compression and inference toolchain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("missing quantization scale for site `{0}`")]
    MissingScale(String),

    #[error("model is not ReLU-fied; integer execution requires ReLU activations")]
    NotRelufied,

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },

    #[error("input too short: need at least {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },

    #[error("SI-SNR undefined: target signal is all zeros")]
    ZeroTarget,

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Store(#[from] crate::store::StoreError),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
