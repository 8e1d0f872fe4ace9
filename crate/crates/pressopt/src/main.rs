use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::error;
use pressopt::config::{Mode, RunConfig};
use pressopt::export::{export_to_file, ExportKind};
use pressopt::runner::{CycleReport, Run};
use pressopt::service::{self, AppState};
use pressopt::Error;
use pressopt_core::policy::{LoopStatus, StopReason};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "pressopt", version, about = "Bayesian optimization of deep drawing press parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop to an end condition.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also serve the HTTP API for this run.
        #[arg(long)]
        serve: Option<SocketAddr>,
    },
    /// Write plot data of a finished or running run as CSV.
    Export {
        /// Run id, or the path of a run directory.
        #[arg(long)]
        run: String,
        #[arg(long)]
        kind: ExportKind,
        #[arg(long)]
        out: PathBuf,
        /// Directory holding the runs (default: the one named in --config, else ./runs).
        #[arg(long)]
        runs_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Propose a starting design from the stored history.
    PredictInitial {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the HTTP API; runs are created with POST /runs.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("pressopt: {e}");
    match e {
        Error::Config(_) | Error::Core(_) => ExitCode::from(EXIT_CONFIG),
        Error::Backend(_) => ExitCode::from(EXIT_BACKEND),
        _ => ExitCode::FAILURE,
    }
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build()
}

fn status_line(r: &CycleReport) -> String {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
    let status = match r.status {
        LoopStatus::Running => "running".to_string(),
        LoopStatus::AwaitingHuman => "awaiting_human".to_string(),
        LoopStatus::Stopped(reason) => format!("stopped ({})", reason.as_str()),
    };
    let failed = r.records.iter().filter(|x| x.meta.failed).count();
    let early = r.records.iter().filter(|x| x.meta.terminated_early).count();
    format!(
        "cycle {} iteration {} source {} rows {} jobs {} failed {} terminated {} ei_sum {} best {} status {}",
        r.cycle,
        r.iteration,
        r.source.as_str(),
        r.training_rows,
        r.records.len(),
        failed,
        early,
        fmt(r.ei_sum),
        fmt(r.best),
        status
    )
}

fn cmd_run(config: &Path, mode: Option<Mode>, seed: Option<u64>, serve: Option<SocketAddr>) -> ExitCode {
    let mut config = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return exit_for(&e),
    };
    if let Some(m) = mode {
        config.run.mode = m;
    }
    if let Some(s) = seed {
        config.run.seed = s;
    }
    let base_dir = config.data.runs.clone();
    let mut run = match Run::create(config) {
        Ok(r) => r,
        Err(e) => return exit_for(&e),
    };
    let rt = match runtime() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let shared = run.shared();
    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let (shared, interrupted) = (shared.clone(), interrupted.clone());
        rt.spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                interrupted.store(true, Ordering::SeqCst);
                shared.request_stop();
            }
        });
    }
    if let Some(addr) = serve {
        let listener = match rt.block_on(tokio::net::TcpListener::bind(addr)) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {addr}: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        };
        let app = AppState::new(base_dir);
        app.register(&run.id, shared.clone());
        rt.spawn(async move {
            if let Err(e) = service::serve(listener, app, std::future::pending()).await {
                error!("http service stopped: {e}");
            }
        });
    }
    println!("run {} in {}", run.id, run.run_dir().map(|d| d.display().to_string()).unwrap_or_default());
    let result = run.run_to_end(|r| println!("{}", status_line(r)));
    rt.shutdown_background();
    match result {
        Ok(reason) => {
            println!("stopped: {}", reason.as_str());
            if interrupted.load(Ordering::SeqCst) {
                ExitCode::from(EXIT_INTERRUPTED)
            } else if reason == StopReason::BackendFailure {
                ExitCode::from(EXIT_BACKEND)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => exit_for(&e),
    }
}

fn cmd_export(run: &str, kind: ExportKind, out: &Path, runs_dir: Option<PathBuf>, config: Option<PathBuf>) -> ExitCode {
    let as_path = PathBuf::from(run);
    let dir = if as_path.is_dir() {
        as_path
    } else {
        let runs = match (runs_dir, config) {
            (Some(d), _) => d,
            (None, Some(c)) => match RunConfig::load(&c) {
                Ok(c) => c.data.runs,
                Err(e) => return exit_for(&e),
            },
            (None, None) => PathBuf::from("runs"),
        };
        runs.join(run)
    };
    if !dir.is_dir() {
        return exit_for(&Error::Config(format!("no run {run} in {}", dir.parent().unwrap_or(Path::new(".")).display())));
    }
    match export_to_file(kind, &dir, out) {
        Ok(rows) => {
            println!("wrote {rows} rows to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => exit_for(&e),
    }
}

fn cmd_predict_initial(config: &Path) -> ExitCode {
    let result = RunConfig::load(config)
        .and_then(|c| pressopt::runner::build_backend(&c).and_then(|b| Run::with_backend(c, b, "predict".into(), None)))
        .and_then(|run| run.predict_initial());
    match result {
        Ok(x) => {
            println!("{}", serde_json::to_string(&x).expect("design serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => exit_for(&e),
    }
}

fn cmd_serve(addr: SocketAddr) -> ExitCode {
    let rt = match runtime() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let app = AppState::new(std::env::current_dir().unwrap_or_default());
    let stopper = app.clone();
    let result = rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on {}", listener.local_addr()?);
        service::serve(listener, app, async move {
            let _ = tokio::signal::ctrl_c().await;
            stopper.stop_all();
        })
        .await
    });
    match result {
        Ok(()) => ExitCode::from(EXIT_INTERRUPTED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, mode, seed, serve } => cmd_run(&config, mode, seed, serve),
        Command::Export {
            run,
            kind,
            out,
            runs_dir,
            config,
        } => cmd_export(&run, kind, &out, runs_dir, config),
        Command::PredictInitial { config } => cmd_predict_initial(&config),
        Command::Serve { addr } => cmd_serve(addr),
    }
}
