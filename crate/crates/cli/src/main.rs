use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hullsight_core::bridge::{
    exit_status_for, replay, run_headless, serve, ExitStatus, MetricKind, Report, RunOptions,
    ServeOptions,
};
use hullsight_core::config::RunConfig;
use hullsight_core::sim::load_world;

#[derive(Parser)]
#[command(
    name = "hullsight",
    version,
    about = "Supervised-autonomy inspection MAV stack"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a mission script headlessly and write log.csv, events.jsonl and manifest.json.
    Run {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run as fast as possible instead of in real time.
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration document.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write estimation.csv with estimated and true state per tick.
        #[arg(long)]
        trace: bool,
    },
    /// Run the vehicle live and accept one ground-station session over TCP or WebSocket.
    Serve {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Port to listen on; 0 picks a free one.
        #[arg(long, default_value_t = 7070)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated seconds per wall second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Compute an evaluation report from one or more run logs.
    Metrics {
        /// hover, collision, gohome, sweep or vertical.
        kind: MetricKind,
        /// log.csv files; gohome takes several.
        #[arg(long = "log", required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        /// Write report.json and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a manifest and check the log is byte-identical.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run {
            world,
            script,
            seed,
            fast,
            out,
            config,
            trace,
        } => {
            let opts = RunOptions {
                world,
                script,
                seed,
                fast,
                out,
                config,
                trace,
            };
            match run_headless(&opts) {
                Ok(summary) => {
                    println!(
                        "{}",
                        serde_json::to_string(&summary).expect("summary serializes")
                    );
                    ExitCode::from(summary.exit.code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_status_for(&e).code() as u8)
                }
            }
        }
        Cmd::Serve {
            world,
            seed,
            port,
            host,
            config,
            speed,
        } => serve_cmd(world, seed, SocketAddr::new(host, port), config, speed),
        Cmd::Metrics { kind, logs, out } => metrics_cmd(kind, &logs, out),
        Cmd::Replay { manifest, out } => match replay(&manifest, &out) {
            Ok(r) => {
                println!(
                    "{}",
                    serde_json::json!({"log_matches": r.log_matches, "events_match": r.events_match, "summary": r.summary})
                );
                if r.log_matches && r.events_match {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_status_for(&e).code() as u8)
            }
        },
    }
}

fn invalid(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(ExitStatus::InvalidInput.code() as u8)
}

fn serve_cmd(
    world: PathBuf,
    seed: u64,
    addr: SocketAddr,
    config: Option<PathBuf>,
    speed: f64,
) -> ExitCode {
    let world = match load_world(&world) {
        Ok(w) => w,
        Err(e) => return invalid(e),
    };
    let config = match config.map(RunConfig::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => return invalid(e),
    };
    let handle = match serve(ServeOptions {
        world,
        seed,
        config,
        addr,
        speed,
    }) {
        Ok(h) => h,
        Err(e) => return invalid(format_args!("cannot listen on {addr}: {e}")),
    };
    println!("listening on {}", handle.addr());
    let _ = std::io::stdout().flush();
    handle.join();
    ExitCode::SUCCESS
}

fn metrics_cmd(kind: MetricKind, logs: &[PathBuf], out: Option<PathBuf>) -> ExitCode {
    let report = match Report::from_logs(kind, logs) {
        Ok(r) => r,
        Err(e) => return invalid(e),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = out {
        let written = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(dir.join("report.json"), &json))
            .and_then(|_| std::fs::write(dir.join("report.csv"), report.csv()));
        if let Err(e) = written {
            return invalid(format_args!(
                "cannot write report to {}: {e}",
                dir.display()
            ));
        }
    }
    println!("{json}");
    ExitCode::SUCCESS
}
