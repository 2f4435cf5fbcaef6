use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpr_lab::{
    cmd_ablate, cmd_diagnose, cmd_generate, cmd_run, cmd_verify_bounds, ExperimentConfig, LabResult,
    Outcome, Overrides,
};

#[derive(Parser)]
#[command(name = "dpr", version, about = "Disagreement-probability resampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Write train and unbiased test datasets in the native format.
    Generate,
    /// Train the selected mode over every rho and seed.
    Run,
    /// Sweep the initialization/GCE/augmentation toggles, q, tau or modes.
    Ablate,
    /// Check both generalization bounds and Monte Carlo Hoeffding rates.
    VerifyBounds {
        /// Evaluate this model instead of training one per seed.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Disagreement histograms and group-loss ordering of biased vs random models.
    Diagnose {
        /// Biased model to diagnose instead of training one per seed.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Opts {
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated seeds; `a..b` is a half-open range.
    #[arg(long, global = true, value_name = "LIST")]
    seeds: Option<String>,
    #[arg(long, global = true, value_parser = ["dpr", "erm", "reweighted"])]
    mode: Option<String>,
    #[arg(long, global = true, value_name = "LIST")]
    rho: Option<String>,
    #[arg(long, global = true, value_name = "LIST")]
    q: Option<String>,
    #[arg(long, global = true, value_name = "LIST")]
    tau: Option<String>,
    #[arg(long, global = true)]
    no_init: bool,
    #[arg(long, global = true)]
    no_gce: bool,
    #[arg(long, global = true)]
    no_augment: bool,
    #[arg(long, global = true, value_name = "PATH")]
    idx_images: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    idx_labels: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

fn config(opts: Opts) -> LabResult<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        out: opts.out,
        seeds: opts.seeds,
        mode: opts.mode,
        rho: opts.rho,
        q: opts.q,
        tau: opts.tau,
        no_init: opts.no_init,
        no_gce: opts.no_gce,
        no_augment: opts.no_augment,
        idx_images: opts.idx_images,
        idx_labels: opts.idx_labels,
        workers: opts.workers,
    })?;
    Ok(cfg)
}

fn execute(cli: Cli) -> LabResult<Outcome> {
    let cfg = config(cli.opts)?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Run => cmd_run(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
        Command::VerifyBounds { checkpoint } => cmd_verify_bounds(&cfg, checkpoint.as_deref()),
        Command::Diagnose { checkpoint } => cmd_diagnose(&cfg, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(out) => {
            for m in &out.messages {
                println!("{m}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("dpr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
