use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use im_core::config::{parse_config, Config};
use im_core::process::Platform;
use im_core::sim::{parse_scenario, Simulation, DEFAULT_HORIZON};
use im_core::time::parse_duration;
use im_core::trace::{compute_metrics, diff_traces, parse_trace, Trace};

#[derive(Parser)]
#[command(name = "im", version, about = "On-demand host functions for network-of-hosts applications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic simulation.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Real processes behind a loopback gateway.
    Proc {
        #[command(subcommand)]
        command: ProcCommand,
    },
    /// Resource usage recomputed from a trace.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Records and final state of one host.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        host: String,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: PathBuf,
        /// For example `90s` or `60m`.
        #[arg(long, value_parser = duration_arg)]
        horizon: Option<Duration>,
    },
    /// Byte comparison against a golden trace.
    Diff {
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProcCommand {
    /// Serve the configured hosts until Ctrl-C.
    Up {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Where to write the port map; defaults next to the trace.
        #[arg(long)]
        portmap: Option<PathBuf>,
        /// Stop after this long instead of waiting for Ctrl-C.
        #[arg(long, value_parser = duration_arg)]
        duration: Option<Duration>,
    },
}

fn duration_arg(s: &str) -> Result<Duration, String> {
    parse_duration(s).ok_or_else(|| format!("expected <int><us|ms|s|m>, got `{s}`"))
}

/// Exit status 1 with a message.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<Config, Failure> {
    parse_config(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn stream(path: &Path) -> Result<Trace, Failure> {
    let file = fs::File::create(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let mut trace = Trace::new();
    trace.stream_to(Box::new(std::io::BufWriter::new(file)));
    Ok(trace)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sim {
            command:
                SimCommand::Run {
                    config,
                    scenario,
                    seed,
                    trace,
                    horizon,
                },
        } => {
            let config = load_config(&config)?;
            let sc = parse_scenario(&read(&scenario)?).map_err(|e| Failure(format!("{}: {e}", scenario.display())))?;
            let mut sim = Simulation::new(config, &sc, seed)?;
            *sim.trace_mut() = stream(&trace)?;
            let mut run = sim.run(horizon.unwrap_or(DEFAULT_HORIZON));
            run.trace.flush()?;
            if let Some(e) = run.aborted {
                return Err(Failure(format!("script error: {e}")));
            }
        }
        Command::Sim {
            command: SimCommand::Diff { golden, trace },
        } => {
            if let Some(d) = diff_traces(&read(&golden)?, &read(&trace)?) {
                return Err(Failure(d.to_string()));
            }
            println!("traces identical");
        }
        Command::Proc {
            command:
                ProcCommand::Up {
                    config,
                    trace,
                    portmap,
                    duration,
                },
        } => {
            let config = load_config(&config)?;
            let portmap = portmap.unwrap_or_else(|| trace.with_extension("ports"));
            let sink = stream(&trace)?;
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            rt.block_on(async {
                let platform = Platform::start(config, &portmap, sink).await?;
                let mut out = std::io::stdout().lock();
                write!(out, "{}", platform.ports())?;
                writeln!(out, "port map written to {}", portmap.display())?;
                drop(out);
                match duration {
                    Some(d) => tokio::time::sleep(d).await,
                    None => tokio::signal::ctrl_c().await?,
                }
                let mut report = platform.shutdown().await?;
                report.trace.flush()?;
                Ok::<_, Failure>(())
            })?;
        }
        Command::Metrics { trace } => {
            let records = parse_trace(&read(&trace)?)?;
            print!("{}", compute_metrics(&records)?);
        }
        Command::Inspect { trace, host } => {
            let records = parse_trace(&read(&trace)?)?;
            let mine: Vec<_> = records.iter().filter(|r| r.host == host).collect();
            if mine.is_empty() {
                return Err(Failure(format!("no records for host `{host}`")));
            }
            for r in &mine {
                println!("{r}");
            }
            let last_state = mine
                .iter()
                .rev()
                .find(|r| r.kind == "state")
                .and_then(|r| r.detail("to"))
                .unwrap_or("unallocated");
            let inst = mine.iter().map(|r| r.inst).max().unwrap_or(0);
            println!("final state {last_state}, instance {inst}, {} records", mine.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("im: {msg}");
            ExitCode::from(1)
        }
    }
}
