use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use beamalign::agent::Variant;
use beamalign::cli::{self, Overrides, RunConfig, OUT_DIR_ENV};
use beamalign::env::SystemId;
use beamalign::par;

#[derive(Parser)]
#[command(
    name = "beamalign",
    version,
    about = "Goal-conditioned beamline alignment: training, evaluation and baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write a checkpoint plus a training log.
    Train(Common),
    /// Evaluate a checkpoint over the configured ε × max_k grid and seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: the one `train` writes for this config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the methods × ε × max_k grid and write one combined table.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of de,ga,pso,bo,ddpg_uniform,ours (default: config's bench.methods).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Dump the attention weights of one episode.
    Attn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    system: Option<SystemId>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "max-k")]
    max_k: Option<usize>,
    /// Training steps (train only).
    #[arg(long)]
    steps: Option<usize>,
    /// Worker threads for trial evaluation (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides the config and the environment variable.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            system: self.system,
            variant: self.variant,
            epsilon: self.epsilon,
            max_k: self.max_k,
            steps: self.steps,
            out: self.out.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = par::with_jobs(common.jobs, || cli::cmd_train(&cfg))?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("training log: {}", out.log.display());
            println!(
                "final training success rate (last 100 episodes): {:.3}",
                out.success_rate
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve()?;
            let out = par::with_jobs(common.jobs, || cli::cmd_eval(&cfg, checkpoint.as_deref()))?;
            for s in &out.summaries {
                println!(
                    "{} {} eps={} max_k={}: coverage {:.3} ± {:.3}, avg(k) {:.3} ± {:.3}",
                    s.method,
                    s.system,
                    s.epsilon,
                    s.max_k,
                    s.coverage_mean,
                    s.coverage_std,
                    s.avg_k_mean,
                    s.avg_k_std
                );
            }
        }
        Command::Bench { common, methods } => {
            let cfg = common.resolve()?;
            let methods = methods.unwrap_or_else(|| cfg.bench.methods.clone());
            let out = par::with_jobs(common.jobs, || cli::cmd_bench(&cfg, &methods))?;
            for s in &out.rows {
                println!(
                    "{:<13} eps={:<5} max_k={:<3} coverage {:.3}  avg(k) {:.2}",
                    s.method, s.epsilon, s.max_k, s.coverage_mean, s.avg_k_mean
                );
            }
            println!("table: {}", out.table.display());
        }
        Command::Attn { common, checkpoint } => {
            let cfg = common.resolve()?;
            let out = cli::cmd_attn(&cfg, checkpoint.as_deref())?;
            println!("{} steps", out.steps);
            println!("weights: {}", out.weights.display());
            println!("mask: {}", out.mask.display());
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
