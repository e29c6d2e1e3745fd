//! `notecnn`: one subcommand per pipeline stage, all reading the same TOML
//! config. Exit codes: 0 success, 1 usage or configuration error, 2 data
//! error, 3 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use notecnn::config::RunConfig;
use notecnn::corpus::Task;
use notecnn::pipeline::{self, BaselineKind, ModelChoice, StageOutput, TrainOptions};
use notecnn::Error;

#[derive(Debug, Parser)]
#[command(name = "notecnn", version, about = "Mortality prediction from clinical notes")]
struct Cli {
    /// Run-wide seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML config file; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic note corpus with planted mortality signal.
    Synth,
    /// Filter the cohort, tokenize, split and build the vocabulary.
    Preprocess,
    /// Pretrain skip-gram word vectors on the training split.
    Pretrain,
    /// Train the convolutional model for one task.
    Train {
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Weight of the per-sentence replication loss.
        #[arg(long)]
        lambda: Option<f64>,
        /// Train with the replication loss disabled (separate checkpoint).
        #[arg(long)]
        no_replication: bool,
    },
    /// Score a model on the validation and test splits.
    Eval {
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// `cnn`, `lda`, `dbow` or a checkpoint path.
        #[arg(long, default_value = "cnn")]
        model: String,
    },
    /// List a patient's highest- and lowest-risk sentences.
    Rank {
        #[arg(long)]
        patient_id: String,
        #[arg(short)]
        k: Option<usize>,
    },
    /// Fit a baseline representation and its per-task SVMs.
    Baseline {
        #[arg(long, value_parser = parse_baseline)]
        which: BaselineKind,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Pretrain => "pretrain",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Rank { .. } => "rank",
            Command::Baseline { .. } => "baseline",
        }
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::ALL
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| format!("unknown task {s:?} (hospital, 30-day, 1-year)"))
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Data(_) | Error::Shape(_) | Error::State(_) | Error::Checkpoint(_) => 2,
    }
}

fn load_config(cli: &Cli) -> notecnn::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> notecnn::Result<StageOutput> {
    match &cli.command {
        Command::Synth => pipeline::run_synth(cfg),
        Command::Preprocess => pipeline::run_preprocess(cfg),
        Command::Pretrain => pipeline::run_pretrain(cfg),
        Command::Train {
            task,
            lambda,
            no_replication,
        } => {
            if let Some(l) = lambda {
                if !l.is_finite() || *l < 0.0 {
                    return Err(Error::InvalidArgument(format!("--lambda must be >= 0, got {l}")));
                }
            }
            pipeline::run_train(
                cfg,
                TrainOptions {
                    task: task.unwrap_or(cfg.task),
                    lambda: *lambda,
                    no_replication: *no_replication,
                },
            )
        }
        Command::Eval { task, model } => {
            pipeline::run_eval(cfg, task.unwrap_or(cfg.task), &ModelChoice::parse(model))
        }
        Command::Rank { patient_id, k } => {
            let k = k.unwrap_or(cfg.rank.k);
            if k == 0 {
                return Err(Error::InvalidArgument("-k must be at least 1".into()));
            }
            pipeline::run_rank(cfg, cfg.task, patient_id, k)
        }
        Command::Baseline { which } => pipeline::run_baseline(cfg, *which),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stage = cli.command.name();
    let result = load_config(&cli).and_then(|cfg| run(&cli, &cfg));
    match result {
        Ok(out) => {
            println!("{}", out.summary.trim_end());
            for a in &out.artifacts {
                log::info!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("notecnn {stage}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
