//! Command-line front end of the `sis` binary.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;

use super::config::ExperimentSpec;
use super::fit::PilotFit;
use super::report::{render, summarize};
use super::runner::{read_rows, run_calibrate, run_estimate, with_method, write_rows, ResultRow};
use crate::error::{Result, SisError};
use crate::pipeline::Method;
use crate::rng::SourceKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sis", version, about = "Single-index importance sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the calibration stage and write a fit file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Fit file to write [default: fit.toml].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the estimation stage from a fit file and write CSV results.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Calibrate and estimate in one go.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the fit file here.
        #[arg(long)]
        fit_out: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Summarize a results CSV.
    Report {
        csv: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restricts the run to one method.
    #[arg(long)]
    pub method: Option<Method>,
    /// Overrides the configured point generator.
    #[arg(long)]
    pub rng: Option<SourceKind>,
}

#[derive(Debug, Args)]
pub struct Output {
    /// CSV file to write; `-` writes to stdout [default: configured output or results.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append rows to an existing CSV instead of overwriting it.
    #[arg(long)]
    pub append: bool,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::load(&self.config)?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(m) = self.method {
            spec = with_method(&spec, m);
        }
        if let Some(k) = self.rng {
            spec.rng = k;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &SisError) -> i32 {
    match err {
        SisError::InvalidArgument(_) | SisError::Parse(_) => EXIT_VALIDATION,
        SisError::CalibrationFailed(_) | SisError::NoSignal(_) | SisError::IllConditioned(_) => {
            EXIT_CALIBRATION
        }
        SisError::SupportViolation { .. } | SisError::Io(_) => EXIT_OTHER,
    }
}

fn write_csv(spec: &ExperimentSpec, output: &Output, rows: &[ResultRow]) -> Result<()> {
    let path = output
        .out
        .clone()
        .or_else(|| spec.output.clone())
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    if path == Path::new("-") {
        return write_rows(io::stdout().lock(), rows, true);
    }
    let exists = path.exists() && std::fs::metadata(&path)?.len() > 0;
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(output.append)
        .truncate(!output.append)
        .open(&path)?;
    write_rows(file, rows, !(output.append && exists))
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { common, out } => {
            let spec = common.spec()?;
            let fit = run_calibrate(&spec)?;
            fit.save(&out.unwrap_or_else(|| PathBuf::from("fit.toml")))
        }
        Command::Estimate {
            common,
            fit,
            output,
        } => {
            let spec = common.spec()?;
            let fit = PilotFit::load(&fit)?;
            let rows = run_estimate(&spec, &fit)?;
            write_csv(&spec, &output, &rows)
        }
        Command::Run {
            common,
            fit_out,
            output,
        } => {
            let spec = common.spec()?;
            let fit = run_calibrate(&spec)?;
            if let Some(p) = fit_out {
                fit.save(&p)?;
            }
            let rows = run_estimate(&spec, &fit)?;
            write_csv(&spec, &output, &rows)
        }
        Command::Report { csv } => {
            let rows = read_rows(std::fs::File::open(&csv)?)?;
            if rows.is_empty() {
                warn!("{} holds no result rows; the report is empty", csv.display());
            }
            let mut out = io::stdout().lock();
            out.write_all(render(&summarize(&rows)).as_bytes())?;
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
