use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dirbench::config::{BenchmarkConfig, Preset};
use dirbench::overlay::Protocol;
use dirbench::runner::{plot_data, run_benchmark, write_outputs};

#[derive(Parser)]
#[command(name = "bench", version, about = "DHT agent-directory benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every protocol/regime/repetition cell of a config file
    Run {
        config: PathBuf,
        /// Output directory for runs.csv and summary.json
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run only this protocol
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        /// Suppress per-run progress lines
        #[arg(long, short)]
        quiet: bool,
    },
    /// Print a preset config (stationary or churn)
    Preset { name: Preset },
    /// Print plot data from a runs.csv
    Plot { csv: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            protocol,
            seed,
            reps,
            quiet,
        } => {
            let mut cfg = BenchmarkConfig::load(&config)?;
            if let Some(p) = protocol {
                cfg.protocols = vec![p];
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            cfg.validate()?;
            let report = run_benchmark(&cfg, |m| {
                if !quiet {
                    let r = &m.record;
                    eprintln!(
                        "{} {} rep {}: success {:?} p95 {:?} get/q {:?}",
                        r.protocol, r.regime, r.rep, r.success, r.p95_latency, r.msgs_get_per_query
                    );
                }
            })?;
            let (csv, json) = write_outputs(&out, &report)?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Preset { name } => print!("{}", BenchmarkConfig::preset(name).to_text()),
        Command::Plot { csv } => {
            let text = std::fs::read_to_string(&csv)
                .with_context(|| format!("reading {}", csv.display()))?;
            print!("{}", plot_data(&text)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
