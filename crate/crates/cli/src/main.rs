use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlmbic::dataio::TableFormat;

mod demo;
mod fit;
mod select;

/// Fit two-level linear mixed models and compare them with BIC_E, BIC_N and BIC_J.
#[derive(Parser)]
#[command(name = "mlmbic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model by maximum likelihood.
    Fit(FitArgs),
    /// Fit every fixed × random candidate from a config file and rank them.
    Select(SelectArgs),
    /// Information log-determinants on moment-matched data over an (n, J) grid.
    Demo(DemoArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Data file (header row required).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Table format; inferred from the file extension when omitted.
    #[arg(long, value_parser = parse_format)]
    format: Option<TableFormat>,
    /// Cluster id column.
    #[arg(long)]
    group: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model formula, e.g. "y ~ 1 + x + (1 + x | g)".
    #[arg(long)]
    formula: String,
    /// Fit report as JSON.
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// JSON selection config.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Ranked candidates as JSON.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Ranked candidates as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    /// JSON demo config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A: random intercept and slope; B: random intercept only.
    #[arg(long, value_parser = ["A", "B"])]
    model: Option<String>,
    /// Random-effect correlations, comma separated (model A).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    corr: Vec<f64>,
    /// Residual variances, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma2: Vec<f64>,
    /// Cluster sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Cluster counts, comma separated.
    #[arg(long = "J", value_delimiter = ',')]
    j: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Within-cluster covariate handling.
    #[arg(long, value_parser = ["iid", "matched"])]
    within: Option<String>,
    /// Grid CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Regression CSV.
    #[arg(long)]
    out_regression: Option<PathBuf>,
    /// Regression results as JSON.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Four-panel coefficient figure.
    #[arg(long)]
    out_svg: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<TableFormat, String> {
    s.parse().map_err(|e: mlmbic::Error| e.to_string())
}

pub(crate) fn infer_format(path: &Path, given: Option<TableFormat>) -> TableFormat {
    given.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => TableFormat::Csv,
        _ => TableFormat::Whitespace,
    })
}

/// Failure of a subcommand, carrying its exit code.
pub(crate) struct Failure {
    pub code: u8,
    pub msg: String,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            msg: e.to_string(),
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: 1,
        msg: format!("cannot write {}: {e}", path.display()),
    })
}

fn configure_threads() {
    if let Ok(v) = std::env::var("MLMBIC_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring MLMBIC_THREADS={v}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Select(a) => select::run(a),
        Command::Demo(a) => demo::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.msg.is_empty() {
                eprintln!("error: {}", f.msg);
            }
            ExitCode::from(f.code)
        }
    }
}
