//! Subcommands of the `prosody-emph` executable.
//!
//! Each command reads a corpus directory, writes its data files and a
//! `manifest.json` into `--out`, and returns the list of per-utterance
//! failures. Reports are sorted by utterance id.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use commands::{
    cmd_condition, cmd_evaluate, cmd_filter, cmd_label, cmd_predict, cmd_train, cmd_validate,
};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "prosody-emph", version, about = "Emphasis labeling, prediction and conditioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every corpus file against its schema and invariants.
    Validate(CommonArgs),
    /// Derive pseudo emphasis labels from recordings.
    Label(CommonArgs),
    /// Train (or fine-tune with --checkpoint) the emphasis predictor.
    Train(CommonArgs),
    /// Predict emphasis labels with a trained checkpoint.
    Predict(CommonArgs),
    /// Keep pseudo-labelled utterances the predictor confirms confidently.
    Filter(CommonArgs),
    /// Score predicted labels (--labels) against the corpus labels.
    Evaluate(CommonArgs),
    /// Export phone-level conditioning bundles.
    Condition(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Label(_) => "label",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Filter(_) => "filter",
            Command::Evaluate(_) => "evaluate",
            Command::Condition(_) => "condition",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Validate(a)
            | Command::Label(a)
            | Command::Train(a)
            | Command::Predict(a)
            | Command::Filter(a)
            | Command::Evaluate(a)
            | Command::Condition(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Corpus directory with `<id>.utt.json`, `<id>.ann.json`, `<id>.lab.tsv`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory holding `<id>.wav` recordings.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Model checkpoint (input for predict/filter, initial weights for train).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Label directory: pseudo labels for filter, predictions for evaluate,
    /// label source for condition and train. Defaults to the corpus.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// File with one utterance id per line restricting the run.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Confidence threshold for filter.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Overrides the training and conditioning seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub failures: usize,
    pub wall_time_sec: f64,
}

/// Result of one command: data outputs, input counts and failures.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<Failure>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

pub(crate) fn write_json(path: &std::path::Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs one parsed command inside a sized thread pool and writes its
/// manifest. Errors are fatal problems (bad config, unreadable corpus);
/// per-utterance problems are reported in `Outcome::failures`.
pub fn run(cmd: &Command) -> Result<Outcome> {
    let start = Instant::now();
    let args = cmd.args();
    let cfg = RunConfig::load(args.config.as_deref())?.with_overrides(args.seed, args.tau);
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build()?;
    let mut outcome = pool.install(|| match cmd {
        Command::Validate(a) => cmd_validate(a, &cfg),
        Command::Label(a) => cmd_label(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Predict(a) => cmd_predict(a, &cfg),
        Command::Filter(a) => cmd_filter(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::Condition(a) => cmd_condition(a, &cfg),
    })?;
    outcome.failures.sort_by(|a, b| a.id.cmp(&b.id));
    if !outcome.failures.is_empty() {
        let path = args.out.join("report.json");
        write_json(&path, &outcome.failures)?;
        outcome.outputs.push(path);
    }
    outcome.outputs.sort();
    let manifest = Manifest {
        command: cmd.name().to_string(),
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        inputs: serde_json::Value::Object(outcome.inputs.clone()),
        outputs: outcome.outputs.clone(),
        failures: outcome.failures.len(),
        wall_time_sec: start.elapsed().as_secs_f64(),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(outcome)
}
