//! `lrnn`: build, compress, quantize, run and profile recurrent denoisers.

mod commands;
mod config;
mod error;
mod pareto;
mod profile;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "lrnn", version, about = "Sparse and integer-only recurrent denoisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArg {
    /// Run configuration (TOML); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Random stable model from a configuration.
    Init {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Architectural surgery on a float model.
    Surgery {
        /// Swap GELU for ReLU and enable the extra ReLUs.
        #[arg(long)]
        relufy: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// ERK allocation and magnitude masks.
    Prune {
        #[arg(long)]
        target: Option<f64>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        steps_per_epoch: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Static activation scales from audio or synthetic mixtures.
    Calibrate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of mono 16-bit WAV files.
        #[arg(long, conflicts_with = "synthetic")]
        audio: Option<PathBuf>,
        /// Number of synthetic noisy mixtures instead of audio.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the scales as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Freeze a ReLU-fied model and its scales into an integer checkpoint.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scales: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Mask-based denoising of a WAV file.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `fall-through` or `chunked:N`.
        #[arg(long, default_value = "fall-through")]
        mode: String,
        /// `saturate` or `wrap` (integer checkpoints only).
        #[arg(long, default_value = "saturate")]
        policy: String,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Effective MACs, memory, activation densities and frame latency.
    Profile {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `event-driven` or `dense` (float models only).
        #[arg(long, default_value = "event-driven")]
        execution: String,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Per-site error of an integer checkpoint against its float model.
    Compare {
        #[arg(long)]
        float: PathBuf,
        #[arg(long)]
        fxp: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Width sweep over the model family with reference overlay.
    Pareto {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    use commands as c;
    match cli.command {
        Command::Init { spec, seed, out } => c::init(&spec, seed, &out),
        Command::Surgery { relufy, input, out } => c::surgery(relufy, &input, &out),
        Command::Prune { target, input, out, report, epochs, steps_per_epoch, config } => {
            c::prune(c::PruneArgs { target, input, out, report, epochs, steps_per_epoch }, &config)
        }
        Command::Calibrate { input, audio, synthetic, out, report, config } => {
            c::calibrate(&input, audio, synthetic, &out, report.as_deref(), &config)
        }
        Command::Quantize { input, scales, out, config } => c::quantize(&input, &scales, &out, &config),
        Command::Denoise { input, wav, out, mode, policy, config } => {
            c::denoise(&input, &wav, &out, &mode, &policy, &config)
        }
        Command::Profile { input, wav, out, execution, config } => {
            profile::run(&input, &wav, &out, &execution, &config)
        },
        Command::Compare { float, fxp, wav, out, config } => c::compare(&float, &fxp, &wav, &out, &config),
        Command::Pareto { family, reference, out } => pareto::run(&family, reference.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::config(first.trim_start_matches("error: ")).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code() as u8)
        }
    }
}
