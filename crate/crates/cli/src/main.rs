//! `ghcm`: conditional independence testing for functional data.
//!
//! Exit codes: 0 success, 1 output failure, 2 parse or configuration
//! error, 3 dimension or representation error, 4 degenerate test,
//! 5 numerical integration did not converge.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ghcm::regression::GammaChoice;

use commands::{Correction, InnerArg, TestRequest};
use error::{CliError, CliResult};
use io::{write_output, Format};

/// Overrides the worker count when `--workers` is not given.
const WORKERS_ENV: &str = "GHCM_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "ghcm",
    version,
    about = "Generalised Hilbertian Covariance Measure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test X independent of Y given Z.
    Test {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        z: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        format: Format,
        #[arg(long, value_enum, default_value = "euclidean")]
        inner: InnerArg,
        /// `auto`, `none` or a positive penalty.
        #[arg(long, default_value = "auto", value_parser = commands::parse_gamma)]
        gamma: GammaChoice,
        #[arg(long, default_value = "0.05", value_parser = commands::parse_alpha)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rejection rates over simulated replications.
    Simulate {
        /// Scenario JSON: one object or an array.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        reps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "0.05", value_parser = commands::parse_alpha)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-sided confidence interval for a truncation point.
    TruncationCi {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        format: Format,
        #[arg(long, default_value = "0.05", value_parser = commands::parse_alpha)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise edge tests between groups of variables.
    Graph {
        /// One file per variable, in index order.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// JSON list of {"name", "members"}; one group per file if omitted.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        format: Format,
        #[arg(long, value_enum, default_value = "euclidean")]
        inner: InnerArg,
        #[arg(long, default_value = "0.05", value_parser = commands::parse_alpha)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "bh")]
        correction: Correction,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upper tail probability of a weighted sum of chi-square(1) variables.
    Quadform {
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Parse(e.to_string()))
}

fn worker_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| {
            CliError::Parse(format!(
                "{WORKERS_ENV} must be a positive integer, got '{v}'"
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match worker_count(workers)? {
        None => Ok(f()),
        Some(0) => Err(CliError::Parse(
            "the worker count must be at least 1".into(),
        )),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Parse(format!("cannot start {k} workers: {e}"))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Test {
            x,
            y,
            z,
            format,
            inner,
            gamma,
            alpha,
            out,
        } => {
            let req = TestRequest {
                x,
                y,
                z,
                format,
                inner,
                gamma,
                alpha,
            };
            let record = commands::cmd_test(&req)?;
            write_output(out.as_deref(), &to_json(&record)?)
        }
        Command::Simulate {
            scenario,
            reps,
            seed,
            workers,
            alpha,
            out,
        } => {
            let scenarios = commands::load_scenarios(&scenario, seed)?;
            let rows = with_workers(workers, || commands::cmd_simulate(&scenarios, reps, alpha))??;
            write_output(out.as_deref(), &commands::rates_csv(&rows)?)
        }
        Command::TruncationCi {
            x,
            y,
            format,
            alpha,
            out,
        } => {
            let record = commands::cmd_truncation_ci(&x, &y, format, alpha)?;
            for w in &record.warnings {
                eprintln!("warning: {w}");
            }
            write_output(out.as_deref(), &to_json(&record)?)
        }
        Command::Graph {
            data,
            groups,
            format,
            inner,
            alpha,
            correction,
            workers,
            out,
        } => {
            let spec = commands::load_groups(groups.as_deref(), &data)?;
            let csv = with_workers(workers, || {
                commands::cmd_graph(&data, &spec, format, inner, alpha, correction)
            })??;
            write_output(out.as_deref(), &csv)
        }
        Command::Quadform { weights, x, out } => {
            let record = commands::cmd_quadform(&weights, x)?;
            write_output(out.as_deref(), &to_json(&record)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
