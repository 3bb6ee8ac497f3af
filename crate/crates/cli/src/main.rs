//! `yonder` command-line tool.
//!
//! ```text
//! yonder simulate --n 400 --seed 1 --out participants.csv
//! yonder report --input participants.csv --out table.txt
//! yonder serve --config yonder.toml
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use yonder_core::experiment::{apply_exclusions, read_any_csv, write_participants_csv};
use yonder_core::llm::connect;
use yonder_core::stats::{LeveneCenter, NormalityMode};
use yonder_core::{
    build_report_from_deltas, simulate, AnalysisOptions, AppConfig, ConfigError, ExperimentError,
    GatewayError, ScaleSet, SimulationConfig, SimulationError, StubBackend,
};
use yonder_service::{Service, ServiceError};

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("server: {0}")]
    Server(std::io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "yonder", version, about = "Future-self study platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Tsv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Normality {
    /// Pooled residuals, each scaled by its group's SD.
    Standardized,
    /// Raw pooled residuals.
    Residuals,
    PerGroup,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-measure analysis table from a participant or deltas CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Output file; `-` writes to stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// How Shapiro-Wilk is applied before choosing the omnibus test.
        #[arg(long, value_enum, default_value_t = Normality::Standardized)]
        normality: Normality,
        /// Center Levene's test on group medians instead of means.
        #[arg(long)]
        median_levene: bool,
    },
    /// Synthetic participants run end to end through the stub backend.
    Simulate {
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Records that fail an attention check or report a technical issue.
        #[arg(long, default_value_t = 56)]
        flagged: usize,
        /// Participant CSV destination; `-` writes to stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Runs the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path == Path::new("-") {
        std::io::stdout().write_all(bytes).map_err(io)
    } else {
        fs::write(path, bytes).map_err(io)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Report {
            input,
            out,
            format,
            alpha,
            normality,
            median_levene,
        } => {
            let set = ScaleSet::default();
            let deltas = read_any_csv(&read(&input)?, &set)?;
            let options = AnalysisOptions {
                alpha,
                normality: match normality {
                    Normality::Standardized => NormalityMode::PooledStandardized,
                    Normality::Residuals => NormalityMode::PooledResiduals,
                    Normality::PerGroup => NormalityMode::PerGroup,
                },
                levene_center: if median_levene {
                    LeveneCenter::Median
                } else {
                    LeveneCenter::Mean
                },
            };
            let report = build_report_from_deltas(&deltas, &options)?;
            let text = match format {
                Format::Text => report.to_text(),
                Format::Tsv => report.to_tsv(),
                Format::Json => report.to_json(),
            };
            write_out(&out, text.as_bytes())
        }
        Command::Simulate { n, seed, flagged, out } => {
            let config = SimulationConfig {
                n,
                seed,
                flagged,
                ..Default::default()
            };
            let set = ScaleSet::default();
            let records = simulate(&config, &set, &StubBackend)?;
            let kept = apply_exclusions(records.clone()).kept.len();
            log::info!("simulated {n} participants, {kept} pass exclusions");
            let mut csv = Vec::new();
            write_participants_csv(&records, &set, &mut csv)?;
            write_out(&out, &csv)
        }
        Command::Serve { config, bind } => {
            let mut app = match config {
                Some(path) => AppConfig::load(&path)?,
                None => AppConfig::default(),
            };
            if let Some(bind) = bind {
                app.server.bind = bind;
            }
            let backend = connect(&app.backend)?;
            let addr = app.server.bind.clone();
            let service = Arc::new(Service::open(app, Arc::from(backend))?);
            tokio::runtime::Runtime::new()
                .map_err(CliError::Server)?
                .block_on(yonder_service::http::serve(service, &addr))
                .map_err(CliError::Server)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
