//! CSV reports. Each file starts with a `# lrnn:<kind>:v<version>` line.

use std::fs;
use std::path::Path;

use crate::error::{CliResult, Context};

pub const VERSION: u32 = 1;

pub fn header(kind: &str) -> String {
    format!("# lrnn:{kind}:v{VERSION}\n")
}

/// Writes a versioned report; `body` appends the CSV itself.
pub fn write(
    path: &Path,
    kind: &str,
    body: impl FnOnce(&mut Vec<u8>) -> CliResult<()>,
) -> CliResult<()> {
    let mut buf = header(kind).into_bytes();
    body(&mut buf)?;
    fs::write(path, buf).context(path.display())
}

/// Builds a CSV writer over `buf` for ad-hoc reports.
pub fn writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(buf)
}

/// Fixed-precision float cell.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}
