use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dynaweight::experiment::{load_config, load_data, partition, run_experiment};
use dynaweight::graph::Topology;

/// Simulator for decentralized training with adaptive consensus weights.
#[derive(Parser)]
#[command(name = "dynaweight", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a topology's edge list as CSV.
    DumpGraph {
        #[arg(long)]
        topology: Topology,
        #[arg(long)]
        n: usize,
    },
    /// Print per-server class counts for each configured seed.
    PartitionSummary { config: PathBuf },
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("DYNAWEIGHT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .with_context(|| format!("DYNAWEIGHT_THREADS must be a positive integer, got `{value}`"))?;
    anyhow::ensure!(threads > 0, "DYNAWEIGHT_THREADS must be positive");
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    match cli.command {
        Command::Run {
            config,
            seed,
            epochs,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(epochs) = epochs {
                cfg.set_epochs(epochs);
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg)?;
            for r in &report.completed {
                println!(
                    "{:<12} seed {:<4} final accuracy {:.4}  consensus error {:.3e}",
                    r.scheme, r.seed, r.final_accuracy, r.final_consensus_error
                );
            }
            for e in &report.failures {
                let mut msg = e.to_string();
                let mut src = std::error::Error::source(e);
                while let Some(s) = src {
                    msg.push_str(&format!(": {s}"));
                    src = s.source();
                }
                eprintln!("error: {msg}");
            }
            eprintln!(
                "wrote {} files to {}",
                report.files.len(),
                cfg.output_dir.display()
            );
            Ok(if report.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::DumpGraph { topology, n } => {
            let g = topology.build(n)?;
            g.write_edge_csv(io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PartitionSummary { config } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let mut out = io::stdout().lock();
            for &seed in &cfg.seeds {
                writeln!(out, "# seed {seed}")?;
                partition(&cfg, &data.train, seed)?.write_summary_csv(&mut out)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
