use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use velo_cli::commands;
use velo_cli::settings::Settings;

#[derive(Parser)]
#[command(name = "velo", version, about = "Learned-optimizer meta-training and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Config document; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (also the curve store root).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synchronous single-process meta-training.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        /// Resume from these meta-parameters.
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Hold θ and apply meta-gradients sent by workers.
    ServeLearner {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "VELO_LISTEN", default_value = "127.0.0.1:7070")]
        listen: String,
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Estimate meta-gradients for a learner.
    RunWorker {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "VELO_LEARNER", default_value = "127.0.0.1:7070")]
        learner: String,
        #[arg(long)]
        worker_id: Option<u64>,
    },
    /// Learning-rate sweeps of hand-designed optimizers.
    BaselineSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured tasks with a meta-parameter checkpoint.
    Apply {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: PathBuf,
    },
    /// Speedups of stored target curves against the baseline envelope.
    Normalize {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate speedups into CSV, JSON and SVG.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Two-segment runs with each optimizer-state carry-over mode.
    Continue {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: PathBuf,
    },
    /// Fixed example budget across batch sizes.
    BatchSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Time learned-optimizer steps and fit the per-parameter cost model.
    FitTiming {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let load = |c: &Common| Settings::load(c.config.as_deref());
    match cli.cmd {
        Cmd::MetaTrain { common, theta } => {
            let p = commands::meta_train(&load(&common)?, common.seed, &common.out, theta.as_deref())?;
            println!("{}", p.display());
        }
        Cmd::ServeLearner { common, listen, theta } => {
            let p = commands::serve_learner(&load(&common)?, common.seed, &common.out, &listen, theta.as_deref())?;
            println!("{}", p.display());
        }
        Cmd::RunWorker {
            common,
            learner,
            worker_id,
        } => {
            let stats = commands::run_worker(&load(&common)?, common.seed, &learner, worker_id)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Cmd::BaselineSweep { common } => {
            for r in commands::baseline_sweep(&load(&common)?, &common.out)? {
                println!("{}\t{}\tlr={:.3e}\tloss={:.6}", r.task, r.optimizer, r.best_lr, r.mean_final_loss);
            }
        }
        Cmd::Apply { common, theta } => {
            for c in commands::apply(&load(&common)?, &common.out, &theta)? {
                println!("{}\tseed={}\tfinal_loss={}", c.task_id, c.seed, c.final_loss());
            }
        }
        Cmd::Normalize { common } => {
            let sp = commands::normalize(&load(&common)?, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&sp)?);
        }
        Cmd::Report { common } => {
            print!("{}", commands::report(&common.out)?.to_csv());
        }
        Cmd::Continue { common, theta } => {
            for r in commands::continue_runs(&load(&common)?, common.seed, &common.out, &theta)? {
                println!("{}\t{}\tsplice={}\tfinal={}", r.task, r.mode, r.loss_at_splice, r.final_loss);
            }
        }
        Cmd::BatchSweep { common, theta } => {
            for r in commands::batch_sweep_cmd(&load(&common)?, &common.out, theta.as_deref())? {
                println!("{}\tbatch={}\tsteps={}\tloss={}", r.optimizer, r.batch, r.steps, r.final_loss);
            }
        }
        Cmd::FitTiming { common, theta } => {
            let t = commands::fit_timing_cmd(&load(&common)?, common.seed, &common.out, theta.as_deref())?;
            println!(
                "overhead={:.3e} s  per_param={:.3e} s  r2={:.4}",
                t.fit.lambda_overhead, t.fit.lambda_params, t.fit.r2
            );
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
