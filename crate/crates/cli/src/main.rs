use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vucalc::commands::{self, Failure, TrackArgs, VerifyArgs, EXIT_INVALID, EXIT_MISMATCH, EXIT_OK};
use vucalc::report::Report;

/// VU-decompositions, U-gradients and fast tracks of `f = h ∘ Φ`.
#[derive(Parser)]
#[command(name = "vucalc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// VU-decomposition, U-gradient and hypothesis checks at x̄.
    Decompose {
        spec: PathBuf,
        /// Write the JSON report here (`-` for stdout) instead of text.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Probe the fast track along rays in U.
    FastTrack {
        spec: PathBuf,
        /// Comma-separated step sizes, e.g. `0.1,0.01,0.001`.
        #[arg(long)]
        scales: Option<String>,
        /// `auto` or `;`-separated vectors in U coordinates.
        #[arg(long)]
        directions: Option<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare the analytic results with sampling and finite differences.
    Verify {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn emit(report: &Report, json: Option<&Path>) -> Result<(), Failure> {
    let write_err = |e: std::io::Error| Failure {
        code: EXIT_INVALID,
        message: format!("cannot write report: {e}"),
        block: None,
    };
    match json {
        Some(p) if p == Path::new("-") => std::io::stdout().write_all(report.to_json().as_bytes()).map_err(write_err),
        Some(p) => std::fs::write(p, report.to_json()).map_err(write_err),
        None => std::io::stdout().write_all(report.to_text().as_bytes()).map_err(write_err),
    }
}

fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Decompose { spec, json } => {
            let report = commands::decompose(&spec)?;
            emit(&report, json.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::FastTrack {
            spec,
            scales,
            directions,
            json,
        } => {
            let report = commands::fast_track(&spec, &TrackArgs { scales, directions })?;
            emit(&report, json.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            spec,
            seed,
            samples,
            radius,
            json,
        } => {
            let (report, passed) = commands::verify(&spec, &VerifyArgs { seed, samples, radius })?;
            emit(&report, json.as_deref())?;
            if passed {
                Ok(EXIT_OK)
            } else {
                eprintln!("error: verification mismatch");
                Ok(EXIT_MISMATCH)
            }
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => {
            if let Some(block) = &f.block {
                print!("{block}");
            }
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    ExitCode::from(code as u8)
}
