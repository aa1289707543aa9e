use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pwc_cli::{Exit, MeasureArgs};
use pwc_net::Role;

#[derive(Parser)]
#[command(name = "pwc", version, about = "Physical clocks with causality: simulate, analyze, run over UDP")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulated clusters.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Summarize a runs CSV: observed wait-free u against the predictions.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Estimate the delayed fraction at this u instead of each run's own.
        #[arg(long)]
        u: Option<u32>,
        /// Rerun each config under the Wait policy for an exact delayed count.
        #[arg(long)]
        resimulate: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Show HLC's integer-comparison pitfall next to PWC.
    HlcDemo,
    /// UDP agents and cost measurement.
    Net {
        #[command(subcommand)]
        cmd: NetCmd,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// One run from a config without sweep lists.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Every point of a config's cross-product.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Send,
    Receive,
}

#[derive(Subcommand)]
enum NetCmd {
    /// Run one agent until its configured duration ends; prints its stats.
    Agent {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit per-message cost against payload size.
    Measure {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, value_delimiter = ',')]
        peers: Vec<SocketAddr>,
        #[arg(long)]
        listen: Option<SocketAddr>,
        #[arg(long)]
        seconds: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 1400])]
        sizes: Vec<usize>,
        /// Measure a local sink that spins 1 µs per message instead of UDP.
        #[arg(long)]
        fixture: bool,
        /// Write the fit here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn dispatch(cmd: Cmd) -> anyhow::Result<Exit> {
    let mut stdout = io::stdout().lock();
    match cmd {
        Cmd::Sim { cmd: SimCmd::Run { config, seed, out, log } } => {
            pwc_cli::sim_run(&config, seed, &out, log.as_deref())
        }
        Cmd::Sim { cmd: SimCmd::Sweep { config, out_dir, jobs } } => {
            pwc_cli::sim_sweep(&config, &out_dir, jobs.unwrap_or_else(default_jobs))
        }
        Cmd::Analyze { input, out, u, resimulate, jobs } => {
            pwc_cli::analyze(&input, &out, u, resimulate, jobs.unwrap_or_else(default_jobs))
        }
        Cmd::HlcDemo => pwc_cli::hlc_demo(&mut stdout),
        Cmd::Net { cmd: NetCmd::Agent { config } } => pwc_cli::net_agent(&config, &mut stdout),
        Cmd::Net { cmd: NetCmd::Measure { role, peers, listen, seconds, sizes, fixture, out } } => {
            let args = MeasureArgs {
                role: match role {
                    RoleArg::Send => Role::Send,
                    RoleArg::Receive => Role::Receive,
                },
                peers,
                listen,
                seconds,
                sizes,
                fixture,
            };
            match out {
                Some(path) => {
                    let mut f = std::fs::File::create(&path)?;
                    let e = pwc_cli::net_measure(&args, &mut f)?;
                    f.flush()?;
                    Ok(e)
                }
                None => pwc_cli::net_measure(&args, &mut stdout),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.cmd) {
        Ok(e) => ExitCode::from(e as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
