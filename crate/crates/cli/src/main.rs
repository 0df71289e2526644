//! `robust-agg-lab`: stability experiments for robust distributed learning.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 a checked
//! property failed, 3 the requested construction is infeasible.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, ValueEnum};

use crate::commands::{dispatch, exit_code, Output};
use crate::config::{parse_range, Config};
use crate::output::{Format, Sink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Stability sweep over f for poisoning and Byzantine attacks.
    Figure1,
    /// Property suites with pass/fail summaries.
    Verify,
    /// Closed-form stability bounds.
    Bounds,
    /// One paired run of a lower-bound construction.
    Run,
    /// Co-coercivity witness for the trimmed mean.
    Counterexample,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Figure1 => "figure1",
            Command::Verify => "verify",
            Command::Bounds => "bounds",
            Command::Run => "run",
            Command::Counterexample => "counterexample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "robust-agg-lab",
    version,
    about = "Stability experiments for robust distributed learning"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Inclusive range of f, written A..B.
    #[arg(long, value_parser = check_range)]
    f_range: Option<String>,
    /// Suite name (or comma-separated list) for `verify`.
    #[arg(long)]
    suite: Option<String>,
    /// Write a gnuplot script next to the CSV output of `figure1`.
    #[arg(long)]
    emit_plot_script: bool,
}

fn check_range(s: &str) -> Result<String, String> {
    parse_range(s)
        .map(|_| s.to_string())
        .map_err(|e| e.to_string())
}

fn setup(cli: &Cli) -> Result<(Config, Output), robust_agg::Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(seeds) = cli.seeds {
        cfg.set("seeds", seeds.to_string());
    }
    if let Some(range) = &cli.f_range {
        cfg.set("f_range", range.clone());
    }
    if let Some(suite) = &cli.suite {
        cfg.set("suite", suite.clone());
    }
    if let Some(format) = cli.format {
        cfg.set(
            "format",
            match format {
                FormatArg::Csv => "csv",
                FormatArg::Json => "json",
            },
        );
    }
    if let Some(out) = &cli.out {
        cfg.set("out", out.display().to_string());
    }
    if cli.emit_plot_script {
        cfg.set("emit_plot_script", "true");
    }
    cfg.check_keys(cli.command.name())?;

    let format_given = cfg.raw("format").is_some();
    let format = Format::parse(cfg.raw("format").unwrap_or("csv"))?;
    let output = Output {
        sink: Sink {
            path: cfg.raw("out").map(PathBuf::from),
        },
        format,
        format_given,
        emit_plot_script: cfg.get_or("emit_plot_script", false)?,
    };
    Ok((cfg, output))
}

/// A closed downstream pipe (`… | head`) is not an error.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        let io = cause.downcast_ref::<std::io::Error>().or_else(|| {
            cause
                .downcast_ref::<csv::Error>()
                .and_then(|c| match c.kind() {
                    csv::ErrorKind::Io(io) => Some(io),
                    _ => None,
                })
        });
        let json = cause
            .downcast_ref::<serde_json::Error>()
            .and_then(serde_json::Error::io_error_kind);
        io.map(std::io::Error::kind).or(json) == Some(std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = setup(&cli)
        .map_err(anyhow::Error::from)
        .and_then(|(cfg, out)| dispatch(cli.command.name(), &cfg, &out));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
