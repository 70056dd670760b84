use std::fmt;

use lrnn_core::Error;

/// Failure class; doubles as the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config = 2,
    Data = 3,
    Numeric = 4,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { kind: Kind::Numeric, message: message.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// `error kind=<k> code=<n> msg="<text>"` on one line.
    pub fn line(&self) -> String {
        let msg: String = self
            .message
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .collect();
        format!(
            "error kind={} code={} msg=\"{}\"",
            self.kind.name(),
            self.code(),
            msg.replace('"', "'")
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Store(_)
            | Error::Wav(_)
            | Error::Io(_)
            | Error::SampleRate { .. }
            | Error::TooShort { .. }
            | Error::Empty(_)
            | Error::Dimension(_) => Kind::Data,
            Error::NonFinite(_)
            | Error::Range(_)
            | Error::Allocation(_)
            | Error::Calibration(_)
            | Error::MissingScale(_)
            | Error::NotRelufied
            | Error::ZeroTarget => Kind::Numeric,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}

/// Attaches a path or subject to data errors.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| {
            let mut e = e.into();
            e.message = format!("{what}: {}", e.message);
            e
        })
    }
}
