//! `dualmem` command-line harness.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dualmem_core::harness::{self, Config, HarnessError};
use dualmem_core::Env;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "dualmem", version, about = "Dual-memory text agent: collect, induce, distill, evaluate")]
struct Cli {
    /// Environment, overriding the config file.
    #[arg(long, global = true)]
    env: Option<Env>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for generated tasks, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and store them as trajectories.
    Collect {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Mine the transition pool from trajectories.
    BuildPool {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Induce, verify and select feasibility rules.
    Induce {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment successful trajectories into blueprints.
    Distill {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Local TextCraft segmenter instead of the distiller backend.
        #[arg(long)]
        heuristic: bool,
    },
    /// Embed blueprints into a progress memory file.
    BuildMemory {
        #[arg(long)]
        blueprints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the configured task set.
    Eval {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        no_progress_memory: bool,
        #[arg(long)]
        no_feasibility_memory: bool,
    },
    /// Summarise a results file.
    Metrics {
        #[arg(long)]
        results: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<Config, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(env) = cli.env {
        cfg.env = env;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Collect { out, tasks } => {
            if let Some(n) = tasks {
                cfg.tasks.count = n;
            }
            let backend = harness::build_backend(&cfg.backend)?;
            let (episodes, successes) = harness::cmd_collect(&cfg, backend.as_ref(), &out)?;
            println!("collected {episodes} trajectories ({successes} successful) into {}", out.display());
        }
        Command::BuildPool { trajectories, out } => {
            let pool = harness::cmd_build_pool(&trajectories, &out)?;
            println!(
                "pool for {}: {} positive, {} negative transitions -> {}",
                pool.env,
                pool.positives.len(),
                pool.negatives.len(),
                out.display()
            );
        }
        Command::Induce { pool, out } => {
            let backend = harness::build_backend(&cfg.backend)?;
            let report = harness::cmd_induce(&cfg, &pool, backend.as_ref(), &out)?;
            println!(
                "{} candidates, {} parse errors, {} zero-false-rejection, {} selected -> {}",
                report.candidates,
                report.parse_errors,
                report.zero_fp,
                report.selected,
                out.display()
            );
        }
        Command::Distill { trajectories, out, heuristic } => {
            cfg.distill.heuristic |= heuristic;
            let backend = harness::build_backend(&cfg.backend)?;
            let (written, dropped) = harness::cmd_distill(&cfg, &trajectories, backend.as_ref(), &out)
                .with_context(|| format!("distilling {}", trajectories.display()))?;
            println!("{written} blueprints written, {dropped} trajectories dropped -> {}", out.display());
        }
        Command::BuildMemory { blueprints, out } => {
            let memory = harness::cmd_build_memory(&cfg, &blueprints, &out)?;
            println!("{} tasks, {} anchors -> {}", memory.len(), memory.anchor_count(), out.display());
        }
        Command::Eval { out_dir, tasks, workers, no_progress_memory, no_feasibility_memory } => {
            if let Some(n) = tasks {
                cfg.tasks.count = n;
            }
            if let Some(w) = workers {
                cfg.eval.workers = w;
            }
            cfg.ablate(no_progress_memory, no_feasibility_memory);
            let backend = harness::build_backend(&cfg.backend)?;
            let outcome = harness::cmd_eval(&cfg, backend.as_ref(), &out_dir)?;
            print_json(&outcome.metrics)?;
            if outcome.below_threshold {
                eprintln!(
                    "success rate {:.4} is below the configured minimum {:.4}",
                    outcome.metrics.success_rate, cfg.eval.min_success_rate
                );
                return Ok(ExitCode::from(1));
            }
        }
        Command::Metrics { results } => print_json(&harness::cmd_metrics(&results)?)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
