use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use journal_core::harness::{decay_sweep, oracle_check, simulate, SessionScript};
use journal_core::memory::default_lambda;
use journal_core::retrieval::HashedBagOfWords;
use journal_service::api::{router, AppState, SystemClock};
use journal_service::config::{FileConfig, ServiceConfig};
use journal_service::build_engine;

#[derive(Parser)]
#[command(name = "journal", version, about = "Journaling engine service and tools")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Use deterministic in-process providers instead of HTTP models.
        #[arg(long)]
        mock_providers: bool,
    },
    /// Run a scripted session on a virtual clock and print a JSON report.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep state here (e.g. to chain scripts); a fresh temporary store otherwise.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Call the configured HTTP providers instead of the mocks.
        #[arg(long)]
        live_providers: bool,
        /// Include wall-clock timings (makes output run-dependent).
        #[arg(long)]
        timings: bool,
    },
    /// Print decay values as CSV.
    DecaySweep {
        /// Comma-separated rates per day; defaults to ln(4)/6.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 30.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Compare top-k selection against the exhaustive reference.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        corpora: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_size: usize,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<FileConfig, String> {
    match path {
        Some(p) => FileConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(FileConfig::default()),
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let mut file = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Serve {
            port,
            data_dir,
            mock_providers,
        } => {
            file.port = port.or(file.port);
            file.data_dir = data_dir.or(file.data_dir);
            if mock_providers {
                file.mock_providers = Some(true);
            }
            let config = ServiceConfig::resolve(file).map_err(|e| e.to_string())?;
            let engine = build_engine(&config).map_err(|e| e.to_string())?;
            let state = AppState {
                engine: Arc::new(engine),
                clock: Arc::new(SystemClock),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(async move {
                let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.port));
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| e.to_string())?;
                log::info!(
                    "listening on {addr} (data dir {}, mock providers: {})",
                    config.data_dir.display(),
                    config.mock_providers
                );
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| e.to_string())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            script,
            seed,
            data_dir,
            live_providers,
            timings,
        } => {
            let source = std::fs::read_to_string(&script).map_err(|e| format!("{}: {e}", script.display()))?;
            let script: SessionScript = serde_json::from_str(&source).map_err(|e| format!("script: {e}"))?;
            let scratch = data_dir.is_none().then(|| {
                let nanos = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos())
                    .unwrap_or(0);
                std::env::temp_dir().join(format!("journal-sim-{}-{nanos}", std::process::id()))
            });
            file.data_dir = data_dir.or_else(|| scratch.clone());
            file.seed = Some(seed);
            file.mock_providers = Some(!live_providers);
            let mut config = ServiceConfig::resolve(file).map_err(|e| e.to_string())?;
            if let Some(dir) = &scratch {
                // A scratch run never picks up PERSODE_DATA_DIR.
                config.data_dir = dir.clone();
            }
            let engine = build_engine(&config).map_err(|e| e.to_string())?;
            let result = simulate(&engine, &script, timings);
            if let Some(dir) = scratch {
                let _ = std::fs::remove_dir_all(dir);
            }
            let report = result.map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            let failed = report.assertions.iter().any(|a| !a.passed);
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::DecaySweep { lambdas, horizon, step } => {
            let lambdas = if lambdas.is_empty() { vec![default_lambda()] } else { lambdas };
            print!("{}", decay_sweep(&lambdas, horizon, step).map_err(|e| e.to_string())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck {
            corpora,
            seed,
            max_size,
        } => {
            let config = ServiceConfig::resolve(file).map_err(|e| e.to_string())?;
            let report = oracle_check(corpora, seed, max_size, &config.engine.params, &HashedBagOfWords::default())
                .map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
