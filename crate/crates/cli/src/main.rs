//! `imrk`: synthesize phantoms, train and run the detector, and evaluate
//! segmentations, cartilage thickness and effusion volumes.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical failure. Failures print one `error kind=... message=...`
//! line to standard error.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "imrk", version, about = "Instance segmentation and musculoskeletal MRI evaluation on synthetic phantoms")]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Record the wall-clock duration in the run manifest.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key=value file with option defaults; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(commands::synth::SynthArgs),
    /// Train one head variant on a dataset directory.
    Train(commands::train::TrainArgs),
    /// Detect instances in a dataset directory or a single image.
    Infer(commands::infer::InferArgs),
    /// Compare predicted against reference label volumes, per class.
    Eval(commands::eval::EvalArgs),
    /// Flattened cartilage thickness map of a label volume.
    Thickness(commands::thickness::ThicknessArgs),
    /// Label effusion voxels above the Otsu threshold inside a box.
    LabelOtsu(commands::otsu::OtsuArgs),
    /// Pairwise CoV and volume-difference table across raters.
    ReportCov(commands::cov::CovArgs),
}

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: "usage", code: 2, message: message.into() }
    }

    pub fn data(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, code: 3, message: message.into() }
    }
}

impl From<imrk_core::Error> for CliError {
    fn from(e: imrk_core::Error) -> Self {
        use imrk_core::Error as E;
        let (kind, code) = match &e {
            E::Config(_) => ("config", 2),
            E::Diverged { .. } => ("diverged", 4),
            E::Degenerate(_) => ("degenerate", 4),
            E::Autograd(_) => ("autograd", 4),
            E::Io { .. } => ("io", 3),
            E::Format { .. } => ("format", 3),
            E::Dimension(_) => ("dimension", 3),
            E::InvalidArgument(_) => ("invalid_argument", 3),
            E::Empty(_) => ("empty", 3),
            E::Undefined(_) => ("undefined", 3),
        };
        Self { kind, code, message: e.to_string() }
    }
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error kind={} message={}", e.kind, one_line(&e.message));
    ExitCode::from(e.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail(CliError::usage(e.render().to_string()));
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let start = Instant::now();
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Infer(a) => commands::infer::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Thickness(a) => commands::thickness::run(a),
        Command::LabelOtsu(a) => commands::otsu::run(a),
        Command::ReportCov(a) => commands::cov::run(a),
    };
    match result.and_then(|(mut manifest, out)| {
        if cli.timing {
            manifest.wall_clock_ms = Some(start.elapsed().as_millis() as u64);
        }
        manifest.write(&out)
    }) {
        Ok(path) => {
            log::info!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
