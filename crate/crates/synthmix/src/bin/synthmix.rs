use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use synthmix::dataio::{generate_toy_dataset, Split, ToyDatasetSpec};
use synthmix::error::{Error, Result};
use synthmix::harness::ablate::ablate;
use synthmix::harness::evaluate::{evaluate_checkpoint, write_report};
use synthmix::harness::train::train;
use synthmix::harness::RunConfig;
use synthmix::plot::plot_run;

/// Adversarial mix-up training for cross-modality segmentation,
/// desk scale: synthetic benchmark generation, training, evaluation,
/// ablations, and plots.
#[derive(Parser)]
#[command(name = "synthmix", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic cross-modality dataset.
    GenData {
        /// Dataset spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training job.
    Train {
        /// Run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoints, logs, and reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Report path (JSON; a CSV sibling is written next to it).
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the mix-up grid resolution plus the ablation variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated grid sides, e.g. 4,8,32.
        #[arg(long)]
        k: String,
        /// Comma-separated seeds; each variant runs once per seed.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plots from a finished run directory.
    Plot {
        /// A directory previously produced by `train`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::config(format!("bad {what} entry: {s}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { spec, out } => {
            let text =
                std::fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec: ToyDatasetSpec = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("dataset spec parse: {e}")))?;
            let manifest = generate_toy_dataset(&spec, &out)?;
            println!(
                "wrote {} samples under {}",
                manifest.records.len(),
                out.display()
            );
        }
        Cmd::Train { config, out } => {
            let config = RunConfig::load(&config)?;
            let outcome = train(&config, &out)?;
            println!(
                "final dice {:.4}, checkpoint {}",
                outcome.final_report.dice_avg,
                outcome.final_checkpoint.display()
            );
        }
        Cmd::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::config(format!(
                        "unknown split {other}; expected train or test"
                    )))
                }
            };
            let report = evaluate_checkpoint(&checkpoint, &data, split)?;
            write_report(&report, &out)?;
            println!(
                "dice {:.4}, assd {:.4} over {} cases -> {}",
                report.dice_avg,
                report.assd_avg,
                report.n_cases,
                out.display()
            );
        }
        Cmd::Ablate {
            config,
            k,
            seeds,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let ks: Vec<usize> = parse_list(&k, "k")?;
            let seeds: Vec<u64> = parse_list(&seeds, "seed")?;
            let table = ablate(&config, &ks, &seeds, &out)?;
            for warning in &table.warnings {
                eprintln!("warning: {warning}");
            }
            print!("{}", table.render());
        }
        Cmd::Plot { input, out } => {
            let written = plot_run(&input, &out)?;
            println!("wrote {} plot files under {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
