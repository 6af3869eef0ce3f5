use std::path::PathBuf;
use std::process::ExitCode;

use cgre::evaluation::{SizeSplit, ValiditySplit};
use cgre::Result;
use cgre_cli::commands::{self, EvalArgs, SynthKind};
use cgre_cli::config::RunConfig;
use cgre_cli::exit_code;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgre", version, about = "Constraint-graph relation extraction")]
struct Cli {
    /// Worker threads for scoring.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the constraint graph and print its node and edge counts.
    BuildGraph {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json and train.log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a test set; writes metrics.json and pr_curve.csv.
    Eval {
        #[command(flatten)]
        common: ScoreArgs,
        /// Read scores from a prediction file instead of running the model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write per-relation scores to predictions.jsonl.
    Predict {
        #[command(flatten)]
        common: ScoreArgs,
        /// Dataset to score instead of the configured test set.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic world (data files plus run.conf).
    Synth {
        /// overfit, long-tail or distractor.
        kind: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bag-size split: one, two or all.
    #[arg(long)]
    split: Option<String>,
    /// Sentence-validity split: zero, one or all.
    #[arg(long)]
    validity: Option<String>,
}

impl ScoreArgs {
    fn resolve(&self) -> Result<(RunConfig, EvalArgs, PathBuf)> {
        let config = RunConfig::load(&self.config)?;
        let args = EvalArgs {
            split: self.split.as_deref().map(str::parse::<SizeSplit>).transpose()?,
            validity: self.validity.as_deref().map(str::parse::<ValiditySplit>).transpose()?,
            ..EvalArgs::default()
        };
        let out = self.out.clone().unwrap_or_else(|| config.output_dir.clone());
        Ok((config, args, out))
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildGraph {
            schema,
            constraints,
            out,
        } => {
            let report = commands::build_graph(&schema, &constraints, &out)?;
            print!("{}", report.render());
        }
        Command::Train { config, out } => {
            let config = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| config.output_dir.clone());
            let outcome = commands::train_run(&config, &out)?;
            if let Some(last) = outcome.log.epochs.last() {
                println!("trained {} epochs, final loss {:.6}", last.epoch, last.full_loss);
            }
            println!("checkpoint: {}", out.join(commands::CHECKPOINT_FILE).display());
        }
        Command::Eval { common, predictions } => {
            let (config, mut args, out) = common.resolve()?;
            args.predictions = predictions;
            let report = commands::eval_run(&config, &common.checkpoint, &args, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Predict { common, data } => {
            let (config, mut args, out) = common.resolve()?;
            args.data = data;
            let path = commands::predict_run(&config, &common.checkpoint, &args, &out)?;
            println!("predictions: {}", path.display());
        }
        Command::Synth { kind, seed, out } => {
            commands::synth(kind.parse::<SynthKind>()?, seed, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
