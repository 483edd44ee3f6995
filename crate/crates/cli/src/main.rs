//! `predfix`: generate, label, train, evaluate and predict from one run
//! directory.
//!
//! The configuration comes from `--config`, else `<run-dir>/config.toml`
//! when present, else the built-in defaults. The run directory comes from
//! `--run-dir`, else `paths.run_dir`, else `$PREDFIX_RUN_DIR`, else
//! `runs/default`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predfix::harness::{self, ExperimentConfig, BEST_CHECKPOINT};
use predfix::{Error, Result};

#[derive(Parser)]
#[command(
    name = "predfix",
    version,
    about = "Predict-and-fix for recurring binary MILPs"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding data, checkpoints and metrics.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test series into <run-dir>/data.
    Generate,
    /// Solve instances exactly and attach labels.
    Label {
        /// Fraction of training instances to label; defaults to
        /// `training.labeled_fraction`.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train the model, writing checkpoints and the step log.
    Train {
        /// Continue from <run-dir>/last.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Tune γ on validation and score the test split on the ρ grid.
    Evaluate {
        /// Defaults to <run-dir>/best.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score, fix and complete every instance of a series file.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Series file; defaults to the test split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Defaults to <run-dir>/predictions.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let run_dir = cli.run_dir.clone().unwrap_or_else(|| config.run_dir());
    let saved = run_dir.join("config.toml");
    if cli.config.is_none() && saved.exists() {
        config = ExperimentConfig::load(&saved)?;
    }
    Ok((config, run_dir))
}

fn run(cli: &Cli) -> Result<()> {
    let (config, run_dir) = load_config(cli)?;
    std::fs::create_dir_all(&run_dir)?;
    match &cli.command {
        Command::Generate => {
            let data = harness::cmd_generate(&config, &run_dir)?;
            println!(
                "wrote {} / {} / {} series to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                run_dir.join(harness::DATA_DIR).display()
            );
        }
        Command::Label { fraction } => {
            let data = harness::cmd_label(&config, &run_dir, *fraction)?;
            let labeled = data
                .train
                .iter()
                .flat_map(|s| &s.labels)
                .filter(|l| l.is_some())
                .count();
            let total: usize = data.train.iter().map(|s| s.len()).sum();
            println!("labeled {labeled}/{total} training instances and all of val/test");
        }
        Command::Train { resume } => {
            let ckpt = harness::cmd_train(&config, &run_dir, *resume)?;
            match ckpt.best_val {
                Some(v) => println!("best validation nll {v:.6} at step {}", ckpt.best_step),
                None => println!(
                    "finished at step {} (no labeled validation data)",
                    ckpt.best_step
                ),
            }
        }
        Command::Evaluate { checkpoint } => {
            let report = harness::cmd_evaluate(&config, &run_dir, checkpoint.as_deref())?;
            predfix::select::write_metric_table(&report.rows, std::io::stdout().lock())?;
        }
        Command::Predict {
            checkpoint,
            input,
            rho,
            gamma,
            output,
        } => {
            if !(0.0..=1.0).contains(rho) || !(*gamma >= 0.0) {
                return Err(Error::Config("predict needs ρ ∈ [0, 1] and γ ≥ 0".into()));
            }
            let checkpoint = checkpoint
                .clone()
                .unwrap_or_else(|| run_dir.join(BEST_CHECKPOINT));
            let input = input
                .clone()
                .unwrap_or_else(|| harness::split_path(&run_dir, predfix::datagen::Split::Test));
            let output = output
                .clone()
                .unwrap_or_else(|| run_dir.join("predictions.jsonl"));
            let preds = harness::cmd_predict(&checkpoint, &input, *rho, *gamma, &output)?;
            println!("wrote {} predictions to {}", preds.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
