use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtrnn::data::{Split, SyntheticConfig};
use mtrnn::{Architecture, Exec};
use mtrnn_cli::commands;
use mtrnn_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "mtrnn", version, about = "Multi-task recurrent text classification")]
struct Cli {
    /// Run evaluation and other data-parallel work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Joint training over every configured task.
    Train {
        config: PathBuf,
    },
    /// Language-model pre-training of the shared layer.
    Pretrain {
        config: PathBuf,
    },
    /// Continue training one task of a trained checkpoint.
    Finetune {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task name or index.
        #[arg(long)]
        task: String,
        /// Overrides `train.max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Accuracy and per-example predictions on one split.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "test")]
        split: String,
        /// Predictions CSV; defaults to the run's output directory.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Per-token class distributions and shared-gate activations.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        /// One sentence per line.
        #[arg(long)]
        input: PathBuf,
        /// JSON-lines output; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic task family and a config to train on it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        tasks: usize,
        #[arg(long, default_value_t = 200)]
        train_size: usize,
        #[arg(long, default_value_t = 200)]
        dev_size: usize,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        #[arg(long, default_value = "shared")]
        architecture: String,
    },
}

fn parse<T: std::str::FromStr<Err = mtrnn::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(CliError::from)
}

fn run(cli: Cli) -> CliResult<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = commands::train(&cfg, exec)?;
            println!(
                "trained {} epochs, {} updates; checkpoints in {}",
                out.report.epochs_run,
                out.report.total_steps,
                out.final_checkpoint.parent().unwrap_or(&cfg.output_dir).display()
            );
        }
        Command::Pretrain { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = commands::pretrain(&cfg, exec)?;
            let last = out.report.epochs.last().map_or(out.report.initial_heldout_perplexity, |e| e.heldout_perplexity);
            println!(
                "held-out perplexity {:.3} -> {last:.3}; checkpoint {}",
                out.report.initial_heldout_perplexity,
                out.checkpoint.display()
            );
        }
        Command::Finetune {
            config,
            checkpoint,
            task,
            epochs,
            output_dir,
        } => {
            let cfg = RunConfig::load(&config)?;
            let out = commands::finetune(&cfg, &checkpoint, &task, epochs, output_dir.as_deref(), exec)?;
            println!("fine-tuned task {}; checkpoint {}", out.task, out.checkpoint.display());
        }
        Command::Eval {
            config,
            checkpoint,
            task,
            split,
            predictions,
        } => {
            let cfg = RunConfig::load(&config)?;
            let split: Split = parse(&split)?;
            let out = commands::eval(&cfg, &checkpoint, &task, split, predictions.as_deref(), exec)?;
            println!("accuracy {}", out.evaluation.accuracy);
        }
        Command::Trace {
            checkpoint,
            task,
            input,
            output,
        } => {
            let (records, gated) = commands::trace(&checkpoint, &task, &input)?;
            if !gated {
                eprintln!("warning: the checkpoint has no shared layer; gate traces are unavailable");
            }
            commands::write_trace(&records, output.as_deref())?;
        }
        Command::Synth {
            out,
            seed,
            tasks,
            train_size,
            dev_size,
            test_size,
            label_noise,
            architecture,
        } => {
            let arch: Architecture = parse(&architecture)?;
            let synthetic = SyntheticConfig {
                seed,
                task_count: tasks,
                train_size,
                dev_size,
                test_size,
                label_noise,
                ..SyntheticConfig::default()
            };
            let path = commands::synth(&out, &synthetic, arch)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
