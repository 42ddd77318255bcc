//! The `bae-qnd-sim` command-line front end.
//!
//! Every command writes a [`ResultEnvelope`]: as one JSON document with
//! `--format json`, or as a CSV payload plus a `PATH.meta.json` sidecar
//! holding the metadata and checksum with `--format csv`.
//!
//! Exit codes: see [`CliError::exit_code`].

mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
pub use output::{Cell, ResultEnvelope, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_OVERFLOW: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "BAE_QND_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bae-qnd-sim", version, about = "Backaction-evading QND measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Outcome density and joint photon-number densities for vacuum input.
    Distribution(CommonArgs),
    /// Exact jump probability against its asymptote for a list of resolutions.
    JumpSweep(CommonArgs),
    /// Exact and (with --shots) sampled jump/outcome correlations.
    Correlation(CommonArgs),
    /// Completeness of the measurement operators.
    PovmCheck(CommonArgs),
    /// Equivalence of the optical circuit and the measurement operator.
    SetupCheck(CommonArgs),
    /// Monte Carlo records and their summary.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Measurement resolution; a comma-separated list for jump-sweep.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    delta_x: Vec<f64>,
    /// OPA gain; the resolution is derived as a/(2(a²−1)).
    #[arg(long)]
    gain_a: Option<f64>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long)]
    grid_span: Option<f64>,
    #[arg(long)]
    grid_count: Option<usize>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = crate::measurement::DEFAULT_N_MAX)]
    n_max: usize,
    /// Keep every k-th shot in the simulate record table.
    #[arg(long, default_value_t = 1)]
    record_stride: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Fully resolved configuration, recorded in every output's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub delta_x: Vec<f64>,
    pub gain_a: Option<f64>,
    pub dim: usize,
    pub grid_span: Option<f64>,
    pub grid_count: usize,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub n_max: usize,
    pub record_stride: u64,
    pub out: PathBuf,
    pub format: Format,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 1 I/O, 2 configuration, 3 numeric precondition or failed check,
    /// 4 truncation overflow.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::CheckFailed(_) => EXIT_NUMERIC,
            CliError::Sim(e) => match e {
                Error::InvalidDimension { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidParameter(_)
                | Error::OutOfRange { .. } => EXIT_CONFIG,
                Error::TruncationOverflow { .. } => EXIT_OVERFLOW,
                _ => EXIT_NUMERIC,
            },
        }
    }

    fn hint(&self) -> Option<String> {
        match self {
            CliError::Sim(Error::GridTooNarrow { required, .. }) => {
                Some(format!("pass --grid-span {required} or wider"))
            }
            CliError::Sim(Error::TruncationOverflow { dim, .. }) => {
                Some(format!("increase --dim beyond {dim}"))
            }
            _ => None,
        }
    }
}

fn resolve(command: &str, args: CommonArgs) -> Result<RunConfig, CliError> {
    let CommonArgs {
        delta_x,
        gain_a,
        dim,
        grid_span,
        grid_count,
        shots,
        seed,
        n_max,
        record_stride,
        out,
        format,
    } = args;
    if !delta_x.is_empty() && gain_a.is_some() {
        return Err(CliError::Config("give either --delta-x or --gain-a, not both".into()));
    }
    for &v in &delta_x {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::Config(format!("--delta-x must be positive, got {v}")));
        }
    }
    if let Some(a) = gain_a {
        if !(a > 1.0) || !a.is_finite() {
            return Err(CliError::Config(format!("--gain-a must exceed 1, got {a}")));
        }
    }
    let delta_x = match command {
        "setup-check" => {
            if gain_a.is_none() {
                return Err(CliError::Config("setup-check needs --gain-a".into()));
            }
            Vec::new()
        }
        "jump-sweep" => {
            if delta_x.is_empty() {
                return Err(CliError::Config("jump-sweep needs --delta-x with one or more values".into()));
            }
            delta_x
        }
        _ => match (delta_x.len(), gain_a) {
            (1, None) => delta_x,
            (0, Some(a)) => vec![a / (2.0 * (a * a - 1.0))],
            (0, None) => return Err(CliError::Config(format!("{command} needs --delta-x or --gain-a"))),
            _ => return Err(CliError::Config(format!("{command} takes a single --delta-x"))),
        },
    };
    if dim < 4 {
        return Err(CliError::Config(format!("--dim must be at least 4, got {dim}")));
    }
    if n_max >= dim {
        return Err(CliError::Config(format!("--n-max must be below --dim ({n_max} >= {dim})")));
    }
    if let Some(span) = grid_span {
        if !(span > 0.0) || !span.is_finite() {
            return Err(CliError::Config(format!("--grid-span must be positive, got {span}")));
        }
    }
    let grid_count = grid_count.unwrap_or(2001);
    if grid_count < 2 {
        return Err(CliError::Config("--grid-count must be at least 2".into()));
    }
    if record_stride == 0 {
        return Err(CliError::Config("--record-stride must be at least 1".into()));
    }
    match command {
        "simulate" => {
            if shots.is_none() || seed.is_none() {
                return Err(CliError::Config("simulate needs --shots and --seed".into()));
            }
        }
        "correlation" => {
            if shots.is_some() && seed.is_none() {
                return Err(CliError::Config("--shots needs an explicit --seed".into()));
            }
        }
        _ => {}
    }
    if shots == Some(0) {
        return Err(CliError::Config("--shots must be at least 1".into()));
    }
    Ok(RunConfig {
        command: command.to_string(),
        delta_x,
        gain_a,
        dim,
        grid_span,
        grid_count,
        shots,
        seed,
        n_max,
        record_stride,
        out,
        format,
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a pool may already exist when run repeatedly in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("bae-qnd-sim: {e}");
            if let Some(hint) = e.hint() {
                eprintln!("hint: {hint}");
            }
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (name, args) = match cli.command {
        Command::Distribution(a) => ("distribution", a),
        Command::JumpSweep(a) => ("jump-sweep", a),
        Command::Correlation(a) => ("correlation", a),
        Command::PovmCheck(a) => ("povm-check", a),
        Command::SetupCheck(a) => ("setup-check", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let config = resolve(name, args)?;
    commands::dispatch(&config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, CliError> {
        let cli = Cli::try_parse_from(std::iter::once("bae-qnd-sim").chain(args.iter().copied()))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let (name, a) = match cli.command {
            Command::Distribution(a) => ("distribution", a),
            Command::JumpSweep(a) => ("jump-sweep", a),
            Command::Correlation(a) => ("correlation", a),
            Command::PovmCheck(a) => ("povm-check", a),
            Command::SetupCheck(a) => ("setup-check", a),
            Command::Simulate(a) => ("simulate", a),
        };
        resolve(name, a)
    }

    #[test]
    fn defaults_are_resolved() {
        let c = parse(&["distribution", "--delta-x", "10", "--out", "x.json"]).unwrap();
        assert_eq!(c.dim, 32);
        assert_eq!(c.grid_count, 2001);
        assert_eq!(c.n_max, 4);
        assert_eq!(c.format, Format::Json);
        assert_eq!(c.delta_x, vec![10.0]);
    }

    #[test]
    fn gain_is_converted_to_resolution() {
        let c = parse(&["correlation", "--gain-a", "1.5", "--out", "x"]).unwrap();
        assert!((c.delta_x[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn conflicting_or_missing_parameters_are_config_errors() {
        let cases: [&[&str]; 9] = [
            &["distribution", "--delta-x", "1", "--gain-a", "2", "--out", "x"],
            &["distribution", "--out", "x"],
            &["distribution", "--delta-x", "1,2", "--out", "x"],
            &["distribution", "--delta-x", "-1", "--out", "x"],
            &["setup-check", "--delta-x", "1", "--out", "x"],
            &["simulate", "--delta-x", "1", "--shots", "10", "--out", "x"],
            &["correlation", "--delta-x", "1", "--shots", "10", "--out", "x"],
            &["distribution", "--delta-x", "1", "--dim", "4", "--n-max", "4", "--out", "x"],
            &["jump-sweep", "--out", "x"],
        ];
        for args in cases {
            let err = parse(args).unwrap_err();
            assert_eq!(err.exit_code(), EXIT_CONFIG, "{args:?}");
        }
    }

    #[test]
    fn sweep_accepts_lists() {
        let c = parse(&["jump-sweep", "--delta-x", "2,5,10", "--out", "x"]).unwrap();
        assert_eq!(c.delta_x, vec![2.0, 5.0, 10.0]);
    }

    #[test]
    fn error_classes_have_distinct_codes() {
        let overflow = CliError::Sim(Error::TruncationOverflow {
            mode: "circuit",
            occupation: 1e-3,
            dim: 20,
        });
        let narrow = CliError::Sim(Error::GridTooNarrow {
            span: 1.0,
            required: 2.0,
        });
        let config = CliError::Config("x".into());
        let codes = [overflow.exit_code(), narrow.exit_code(), config.exit_code()];
        assert_eq!(codes, [EXIT_OVERFLOW, EXIT_NUMERIC, EXIT_CONFIG]);
        assert!(narrow.hint().unwrap().contains("--grid-span"));
        assert!(overflow.hint().unwrap().contains("--dim"));
    }
}
