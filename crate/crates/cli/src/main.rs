use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bpsynth::commands::{cmd_estimate_time, cmd_filter, cmd_gibbs, cmd_ldf};
use bpsynth::config::GridSpec;
use bpsynth::{Overrides, RunConfig};
use clap::{Parser, Subcommand};

/// Sequential Bayesian predictive synthesis of agent forecast densities.
#[derive(Parser, Debug)]
#[command(name = "bpsynth", version)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, default_value = "config/inflation.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Particle count M.
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// Retained Gibbs chain size N.
    #[arg(long, global = true)]
    chain: Option<usize>,
    /// ESS threshold C.
    #[arg(long = "ess-threshold", global = true)]
    ess_threshold: Option<f64>,
    /// Discount grid: a preset name or `beta:delta,beta:delta,...`.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Discount of the grid combination.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Particle filter with Gibbs interventions.
    Filter,
    /// Repeated-Gibbs baseline at every evaluation step.
    Gibbs {
        /// Score every n-th evaluation step only.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Discounted combinations over the discount grid and the agents.
    Ldf,
    /// Projected repeated-MCMC time from a particle-filter step time.
    EstimateTime {
        /// One-based last time; defaults to the end of the evaluation period.
        #[arg(long)]
        t_end: Option<usize>,
        /// Filter step seconds; defaults to the mean of the last filter run.
        #[arg(long)]
        step_seconds: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let grid = cli
        .grid
        .as_deref()
        .map(GridSpec::parse_flag)
        .transpose()
        .context("--grid")?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        particles: cli.particles,
        chain: cli.chain,
        ess_threshold: cli.ess_threshold,
        grid,
        gamma: cli.gamma,
        out: cli.out,
        threads: cli.threads,
    });
    if let Command::Gibbs { stride: Some(s) } = cli.command {
        cfg.gibbs.stride = s;
    }
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("starting worker pool")?;

    match cli.command {
        Command::Filter => {
            let out = cmd_filter(&cfg)?;
            let mean = out.run.step_seconds.iter().sum::<f64>() / out.run.step_seconds.len() as f64;
            println!(
                "filter: {} steps, {} interventions, mean step {:.4}s, log evidence {:.4}",
                out.run.log_scores.len(),
                out.run.interventions.len(),
                mean,
                out.run.log_evidence
            );
            println!("traces: {}", out.traces.display());
        }
        Command::Gibbs { .. } => {
            let out = cmd_gibbs(&cfg)?;
            let total: f64 = out.run.step_seconds.iter().sum();
            println!("gibbs: {} scored steps in {:.1}s", out.run.steps.len(), total);
            println!("traces: {}", out.traces.display());
        }
        Command::Ldf => {
            let out = cmd_ldf(&cfg)?;
            println!(
                "ldf: {} grid pipelines, {} interventions in total",
                out.bps.grid.len(),
                out.bps.pipeline_interventions.iter().sum::<usize>()
            );
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::EstimateTime { t_end, step_seconds } => {
            let secs = cmd_estimate_time(&cfg, t_end, step_seconds)?;
            println!("{secs:.1}");
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
