use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drowsy_core::cli::{self, CliError, ReplayArgs, RunArgs, ServeArgs};

#[derive(Parser)]
#[command(name = "drowsy", version, about = "Driver drowsiness detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a recorded stream through the full pipeline.
    Replay {
        stream: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Event file to write (replaced if present).
        #[arg(long)]
        out: PathBuf,
        /// Also append events to this persistent store.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        session: Option<String>,
        /// Write the run report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic stream from a scenario file.
    Synth {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the summary dashboard.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        read_only: bool,
    },
    /// Score an event file against a labeled stream.
    Eval {
        stream: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run live from an external landmark detector process.
    Run {
        /// Shell command whose stdout emits stream lines.
        #[arg(long)]
        detector: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        session: Option<String>,
    },
}

fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Replay {
            stream,
            config,
            out,
            store,
            session,
            report,
        } => {
            let r = cli::cmd_replay(&ReplayArgs {
                stream,
                config,
                out,
                store,
                session,
                quiet_alarms: false,
            })?;
            println!("{r}");
            if let Some(path) = report {
                write_json(&path, &r)?;
            }
        }
        Command::Synth { spec, seed, out, config } => {
            let n = cli::cmd_synth(&spec, seed, &out, config.as_deref())?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::Serve {
            config,
            store,
            bind,
            read_only,
        } => {
            let args = ServeArgs {
                config,
                store,
                bind,
                read_only,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(cli::cmd_serve(&args, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
        }
        Command::Eval {
            stream,
            events,
            config,
            out,
        } => {
            let r = cli::cmd_eval(&stream, &events, config.as_deref())?;
            println!("{r}");
            if let Some(path) = out {
                write_json(&path, &r)?;
            }
        }
        Command::Run {
            detector,
            config,
            store,
            session,
        } => {
            let r = cli::cmd_run(&RunArgs {
                detector,
                config,
                store,
                session,
            })?;
            println!("{r}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
