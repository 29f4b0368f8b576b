use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use twinsim::config::{Mode, RunConfig};
use twinsim::runner::{self, RunExtras};
use twinsim::{ConfigError, RunError};

#[derive(Parser)]
#[command(
    name = "twinsim",
    version,
    about = "Blockchain consensus simulator with a protocol-switching digital twin"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write its metrics.
    Run {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated time, e.g. `500s`.
        #[arg(long)]
        duration: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the full event trace.
        #[arg(long)]
        trace: bool,
        /// Also write the accepted chain.
        #[arg(long)]
        dump_chain: bool,
    },
    /// Run all three modes over a seed range with matched workloads.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inclusive range `a..b` or a comma list.
        #[arg(long, default_value = "1..5")]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().trim_start_matches('=').parse()?);
        if a > b {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().with_context(|| format!("bad seed `{x}`")))
        .collect()
}

fn load(config: Option<&PathBuf>) -> Result<RunConfig, ConfigError> {
    match config {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            mode,
            config,
            seed,
            duration,
            out,
            trace,
            dump_chain,
        } => {
            let mut cfg = load(config.as_ref())?;
            cfg.mode = mode;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = duration {
                cfg.set("duration", &d)?;
            }
            cfg.validate()?;
            let output = runner::run_with(
                &cfg,
                RunExtras {
                    trace,
                    observations: false,
                },
            )?;
            output.write_outputs(&out, dump_chain)?;
            let r = &output.report;
            println!(
                "{}: blocks={} committed={} latency={} inter_block={} throughput={:.3}",
                output.run_id(),
                r.blocks,
                r.committed_txs,
                r.avg_tx_latency
                    .map_or("n/a".into(), |v| format!("{v:.4}s")),
                r.avg_inter_block_time
                    .map_or("n/a".into(), |v| format!("{v:.4}s")),
                r.throughput,
            );
            if mode == Mode::Dynamic {
                println!(
                    "decisions={} switches={}",
                    output.decisions.len(),
                    output.switches()
                );
            }
        }
        Command::Compare { config, seeds, out } => {
            let cfg = load(config.as_ref())?;
            cfg.validate()?;
            let seeds = parse_seeds(&seeds)?;
            let configs: Vec<RunConfig> = Mode::ALL
                .into_iter()
                .map(|mode| RunConfig {
                    mode,
                    ..cfg.clone()
                })
                .collect();
            let rows = runner::compare(&configs, &seeds)?;
            std::fs::create_dir_all(&out)?;
            runner::write_metrics_csv(&out.join("metrics.csv"), &rows)?;
            for r in rows.iter().filter(|r| r.seed == "mean") {
                println!(
                    "{:8} latency={:?} inter_block={:?} throughput={:.3}",
                    r.mode, r.avg_tx_latency_s, r.avg_inter_block_time_s, r.throughput_tps
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<ConfigError>().is_some()
                || matches!(
                    e.downcast_ref::<RunError>(),
                    Some(RunError::Config(_) | RunError::MismatchedConfigs(_))
                );
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
