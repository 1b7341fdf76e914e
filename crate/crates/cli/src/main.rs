//! `resdrive`: runs one pipeline stage per invocation and prints a one-line
//! JSON summary on success.
//!
//! Any `--a.b value` (or `--a.b=value`) argument whose name contains a dot
//! overrides that field of the JSON config before the stage runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use resdrive::harness::{self, ExperimentConfig, PlannerKind};
use resdrive::Error;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "resdrive", version, about = "Residual trajectory diffusion planner pipeline")]
#[command(after_help = "Config fields can be overridden with dot paths, e.g. --train.epochs 5 --toggles.irp false")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test scenario datasets.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Experiment seed (same as --seed in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of training scenarios.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fit normalization statistics on the training set.
    FitNorm {
        #[command(flatten)]
        common: Common,
    },
    /// Train the denoiser.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the ranker against the frozen denoiser.
    TrainRanker {
        #[command(flatten)]
        common: Common,
    },
    /// Write candidate sets for the first test scenes.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Number of test scenes to sample.
        #[arg(long, default_value_t = 10)]
        scenes: usize,
    },
    /// Score a planner on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// checkpoint, expert or reference.
        #[arg(long, default_value = "checkpoint")]
        planner: String,
    },
    /// Train and evaluate the M0 to M4 ablation rows.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Per-timestep statistics of raw, residual and normalized plans.
    AnalyzeDist {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::FitNorm { common }
            | Command::Train { common }
            | Command::TrainRanker { common }
            | Command::Sample { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common }
            | Command::AnalyzeDist { common } => common,
        }
    }
}

/// Pulls `--a.b value` / `--a.b=value` pairs out of `argv`; the rest goes to clap.
fn split_overrides(argv: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut overrides = Vec::new();
    let mut args = argv.into_iter();
    while let Some(arg) = args.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.contains('.')) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((key, value)) => overrides.push((key.to_string(), value.to_string())),
            None => {
                let value = args.next().ok_or_else(|| format!("--{flag} needs a value"))?;
                overrides.push((flag.to_string(), value));
            }
        }
    }
    Ok((rest, overrides))
}

fn run(command: &Command, mut overrides: Vec<(String, String)>) -> resdrive::Result<Value> {
    if let Command::GenData { seed, count, .. } = command {
        if let Some(seed) = seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(count) = count {
            overrides.push(("data.train_count".into(), count.to_string()));
        }
    }
    let cfg = ExperimentConfig::load(&command.common().config)?.with_overrides(&overrides)?;
    let summary = match command {
        Command::GenData { .. } => harness::gen_data(&cfg)?,
        Command::FitNorm { .. } => harness::fit_norm(&cfg)?,
        Command::Train { .. } => harness::train(&cfg)?,
        Command::TrainRanker { .. } => harness::train_ranker_stage(&cfg)?,
        Command::Sample { scenes, .. } => harness::sample(&cfg, *scenes)?,
        Command::Eval { planner, .. } => harness::eval(&cfg, PlannerKind::parse(planner)?)?,
        Command::Ablate { .. } => harness::ablate(&cfg)?,
        Command::AnalyzeDist { .. } => harness::analyze_dist(&cfg)?,
    };
    Ok(summary)
}

fn main() -> ExitCode {
    let (argv, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(split) => split,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match run(&cli.command, overrides) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::Config(_)) {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            ExitCode::FAILURE
        }
    }
}
