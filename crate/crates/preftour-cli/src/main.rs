//! `preftour`: train and evaluate preference-optimized tour policies.
//!
//! Subcommands: generate, train, compare, finetune, evaluate, analyze.
//! Exit codes: 0 success, 1 usage/config error, 2 I/O error.

mod commands;
mod error;
mod run;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::DecodeMode;
use crate::error::AppError;

#[derive(Parser)]
#[command(
    name = "preftour",
    version,
    about = "Preference-trained tour policies for the Euclidean TSP"
)]
struct Cli {
    /// Root seed; overrides the seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-instance parallelism. Outputs are identical
    /// at every setting.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate uniform random instances into --out.
    Generate {
        /// Nodes per instance (≥ 3).
        #[arg(long)]
        n: usize,
        /// Number of instances.
        #[arg(long)]
        count: usize,
    },
    /// Train one policy per instance; writes metrics, checkpoints, summary,
    /// and a manifest into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        /// Exit successfully if --out already holds a finished run.
        #[arg(long)]
        resume: bool,
        /// Start from the checkpoints of a previous run instead of the
        /// config's init.
        #[arg(long)]
        from_checkpoints: Option<PathBuf>,
    },
    /// Paired run of two configs over the same instances and seeds.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        /// Gap threshold for the iterations-to-gap tables.
        #[arg(long, default_value_t = run::DEFAULT_GAP_THRESHOLD)]
        gap_threshold: f64,
    },
    /// Local-search fine-tuning from checkpoints (training with an empty
    /// standard phase).
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        /// Run directory or checkpoint directory/file to start from.
        #[arg(long)]
        checkpoints: PathBuf,
        /// Fine-tune steps (overrides the config's finetune_steps).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Decode checkpoints on instances and report optimality gaps.
    Evaluate {
        /// Run directory, checkpoint directory, or single checkpoint file.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, value_enum, default_value = "greedy")]
        decode: DecodeMode,
        /// Sample count for sample-best-k decoding.
        #[arg(long, default_value_t = 64)]
        k: usize,
        /// Sampling temperature override for evaluation (defaults to the
        /// checkpoint's own).
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Export advantage and training-curve CSVs from a finished run.
    Analyze {
        /// Run directory produced by train/finetune.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        instances: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help to stdout and errors to stderr on its own.
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> error::Result<()> {
    let out = cli.out.as_deref();
    let require_out =
        || out.ok_or_else(|| AppError::Usage("--out is required for this command".into()));
    match cli.command {
        Commands::Generate { n, count } => {
            commands::generate(n, count, cli.seed.unwrap_or(0), require_out()?)
        }
        Commands::Train {
            config,
            instances,
            resume,
            from_checkpoints,
        } => commands::train(
            &config,
            &instances,
            require_out()?,
            cli.seed,
            cli.jobs,
            resume,
            from_checkpoints.as_deref(),
        ),
        Commands::Compare {
            config_a,
            config_b,
            instances,
            gap_threshold,
        } => commands::compare(
            &config_a,
            &config_b,
            &instances,
            require_out()?,
            gap_threshold,
            cli.seed,
            cli.jobs,
        ),
        Commands::Finetune {
            config,
            instances,
            checkpoints,
            steps,
        } => commands::finetune(
            &config,
            &instances,
            &checkpoints,
            require_out()?,
            steps,
            cli.seed,
            cli.jobs,
        ),
        Commands::Evaluate {
            checkpoints,
            instances,
            decode,
            k,
            temperature,
        } => commands::evaluate(
            &checkpoints,
            &instances,
            decode,
            k,
            temperature,
            out,
            cli.seed.unwrap_or(0),
        ),
        Commands::Analyze { run, instances } => commands::analyze(&run, &instances, require_out()?),
    }
}
