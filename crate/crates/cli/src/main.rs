//! `activesvdd` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activesvdd::data::generate_synthetic;
use activesvdd::eval::{aggregate, aggregate_across_datasets, export, ExportFormat, GroupSummary};
use activesvdd::{run_experiment, ConfigError, DataError, Dataset64, LoopError, RunConfig, RunMetrics};
use activesvdd_service::{AppState, ServiceConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Layout version of `manifest.json`.
const MANIFEST_FORMAT: u32 = 1;
const MANIFEST: &str = "manifest.json";
const METRICS: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "activesvdd", version, about = "Active anomaly detection with Deep SVDD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-plus-shell dataset as CSV.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every seed of a configuration and write a manifest and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate the manifests under a directory into one summary.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Add mean-over-datasets rows under the dataset name `aggregated`.
        #[arg(long)]
        across_datasets: bool,
    },
    /// Start the HTTP labeling service.
    Serve {
        /// Default run configuration for new sessions.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory for persisted sessions.
        #[arg(long, default_value = "sessions")]
        state_dir: PathBuf,
        /// Static files of the labeling console.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LoopError> for CliError {
    fn from(e: LoopError) -> Self {
        match e {
            LoopError::Config(_) => CliError::Usage(e.to_string()),
            LoopError::Data(_) | LoopError::PoolExhausted { .. } => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetInfo {
    name: String,
    n: usize,
    d: usize,
    anomaly_ratio: f64,
}

/// Everything `run` produced: the effective configuration and every run.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: RunConfig,
    dataset: DatasetInfo,
    budget: usize,
    runs: Vec<RunMetrics>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { n, dim, ratio, seed, out } => cmd_synth(n, dim, ratio, seed, &out),
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Report {
            runs,
            out,
            format,
            across_datasets,
        } => cmd_report(&runs, &out, format, across_datasets),
        Command::Serve {
            config,
            port,
            host,
            state_dir,
            ui_dir,
        } => cmd_serve(config.as_deref(), &host, port, state_dir, ui_dir),
    }
}

fn cmd_synth(n: usize, dim: usize, ratio: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    let ds: Dataset64 = generate_synthetic(n, dim, ratio, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let file = File::create(out).map_err(io_error(out))?;
    ds.write_csv(BufWriter::new(file))?;
    tracing::info!(rows = ds.n(), anomalies = ds.anomaly_count(), path = %out.display(), "wrote dataset");
    Ok(())
}

fn cmd_run(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let dataset: Dataset64 = config.load_dataset()?;
    let loop_config = config.loop_config();
    tracing::info!(
        dataset = dataset.name(),
        n = dataset.n(),
        seeds = config.seeds.len(),
        "running"
    );
    let runs = run_experiment(&loop_config, &dataset, &config.seeds)?;
    let groups = aggregate(&runs).map_err(|e| CliError::Runtime(e.to_string()))?;

    std::fs::create_dir_all(out).map_err(io_error(out))?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        config,
        dataset: DatasetInfo {
            name: dataset.name().to_string(),
            n: dataset.n(),
            d: dataset.d(),
            anomaly_ratio: dataset.anomaly_ratio(),
        },
        budget: loop_config.budget.budget(dataset.n()),
        runs,
    };
    let path = out.join(MANIFEST);
    let mut w = BufWriter::new(File::create(&path).map_err(io_error(&path))?);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_error(&path))?;
    export(&groups, &out.join(METRICS), ExportFormat::Csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    for s in &groups[0].stages {
        tracing::info!(stage = s.stage, auc_mean = s.auc_mean, auc_std = s.auc_std, "summary");
    }
    Ok(())
}

/// Manifests at `dir/manifest.json` and `dir/*/manifest.json`.
fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut found = Vec::new();
    if dir.join(MANIFEST).is_file() {
        found.push(dir.join(MANIFEST));
    }
    for entry in entries.flatten() {
        let candidate = entry.path().join(MANIFEST);
        if candidate.is_file() {
            found.push(candidate);
        }
    }
    found.sort();
    Ok(found)
}

fn cmd_report(dir: &Path, out: &Path, format: Format, across_datasets: bool) -> Result<(), CliError> {
    let manifests = find_manifests(dir)?;
    if manifests.is_empty() {
        return Err(CliError::Data(format!("no {MANIFEST} found under {}", dir.display())));
    }
    let mut runs = Vec::new();
    for path in &manifests {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        runs.extend(manifest.runs);
    }
    let mut groups: Vec<GroupSummary> = aggregate(&runs).map_err(|e| CliError::Data(e.to_string()))?;
    if across_datasets {
        let pooled = aggregate_across_datasets(&groups).map_err(|e| CliError::Data(e.to_string()))?;
        groups.extend(pooled);
    }
    let fmt = match format {
        Format::Csv => ExportFormat::Csv,
        Format::Json => ExportFormat::Json,
    };
    export(&groups, out, fmt).map_err(|e| CliError::Runtime(e.to_string()))?;
    tracing::info!(manifests = manifests.len(), runs = runs.len(), path = %out.display(), "wrote report");
    Ok(())
}

fn cmd_serve(config: Option<&Path>, host: &str, port: u16, state_dir: PathBuf, ui_dir: Option<PathBuf>) -> Result<(), CliError> {
    let default_config = config.map(RunConfig::load).transpose()?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {addr}: {e}")))?;
        let state = AppState::open(ServiceConfig {
            state_dir: Some(state_dir),
            ui_dir,
            default_config,
        })
        .await
        .map_err(|e| CliError::Data(e.to_string()))?;
        let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("listening on http://{local}");
        activesvdd_service::serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        tracing::info!("sessions saved; stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
