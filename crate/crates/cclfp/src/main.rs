use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cclfp::cli::{cmd_compare, cmd_gradcheck, cmd_run};
use cclfp::config::ExperimentConfig;
use cclfp::error::Result;
use cclfp::trainer::Method;

/// Continual-learning benchmark runner: contrastive continual learning
/// with feature propagation, plus replay and finetune/joint baselines.
#[derive(Parser)]
#[command(name = "cclfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment for each seed and write artifacts.
    Run {
        /// Experiment config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Override the method (finetune, joint, er, ccl-fp, ccl-fp+).
        #[arg(long)]
        method: Option<String>,
        /// Override the replay buffer capacity.
        #[arg(long)]
        buffer: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the IDX data directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print a comparison table over finished run directories.
    Compare {
        /// Run directories produced by `run`.
        dirs: Vec<PathBuf>,
    },
    /// Finite-difference checks for every backward rule and loss.
    Gradcheck {
        /// Random instances per op.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            method,
            buffer,
            out,
            data,
        } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| cclfp::Error::config(format!("{}: {}", config.display(), e)))?;
            let mut experiment = ExperimentConfig::parse(&text)?;
            if !seeds.is_empty() {
                experiment.seeds = seeds;
            }
            if let Some(m) = method {
                experiment.method = Method::parse(&m)?;
            }
            if let Some(b) = buffer {
                experiment.buffer_capacity = b;
            }
            if let Some(o) = out {
                experiment.out_dir = o;
            }
            if let Some(d) = data {
                experiment.data_dir = Some(d);
            }
            experiment.validate()?;

            let (summaries, aggregate) = cmd_run(&experiment)?;
            for s in &summaries {
                let forgetting = s
                    .final_forgetting
                    .map(|f| format!("{:.2}", 100.0 * f))
                    .unwrap_or_else(|| "--".into());
                println!(
                    "seed {:>3}: avg accuracy {:.2}%  forgetting {}%",
                    s.seed,
                    100.0 * s.final_average_accuracy,
                    forgetting
                );
            }
            println!(
                "{} / {} / {} over {} seed(s): {:.2} ± {:.2}%",
                aggregate.dataset,
                aggregate.scenario,
                aggregate.method,
                aggregate.seeds.len(),
                100.0 * aggregate.accuracy_mean,
                100.0 * aggregate.accuracy_std
            );
            println!("artifacts in {}", experiment.out_dir.display());
            Ok(())
        }
        Command::Compare { dirs } => {
            let table = cmd_compare(&dirs)?;
            print!("{}", table);
            Ok(())
        }
        Command::Gradcheck { seeds } => {
            let report = cmd_gradcheck(seeds)?;
            print!("{}", report);
            println!("all gradient checks passed");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
