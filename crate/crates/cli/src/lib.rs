//! The `rationale-audit` command line: corpus preparation, training,
//! perturbation, tracing, auditing, the trojan experiment and study forms.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rationale_audit::{Error, Result};

pub use config::RunConfig;
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "rationale-audit", version, about = "Train, perturb and audit rationale models")]
pub struct Cli {
    /// TOML config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (gets a manifest.json).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-sentence work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the treebank and vectors into a corpus directory.
    PrepareCorpus(PrepareArgs),
    /// Train a CR or PG model.
    Train(TrainArgs),
    /// Accuracy, selection rate and traces on one split.
    Eval(EvalArgs),
    /// Build the perturbed dataset.
    Perturb(PerturbArgs),
    /// Rationale traces for a split and, optionally, its perturbations.
    Trace(TraceArgs),
    /// Trace original and perturbed sentences and compute every statistic.
    Audit(AuditArgs),
    /// The hidden-cue selector/classifier experiment.
    Trojan(TrojanArgs),
    /// Generate human-study forms from an audit.
    Study(StudyArgs),
    /// Score matching-study responses.
    Score(ScoreArgs),
    /// Side-by-side tables for several audits.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PrepareCorpus(_) => "prepare-corpus",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Perturb(_) => "perturb",
            Command::Trace(_) => "trace",
            Command::Audit(_) => "audit",
            Command::Trojan(_) => "trojan",
            Command::Study(_) => "study",
            Command::Score(_) => "score",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Treebank directory (train/dev/test as trees or TSV).
    #[arg(long, required_unless_present = "synthetic")]
    pub sst: Option<PathBuf>,
    /// Word vector text file.
    #[arg(long, required_unless_present = "synthetic")]
    pub embeddings: Option<PathBuf>,
    /// Generate a small corpus, vectors, lexical database and proposer table.
    #[arg(long, conflicts_with_all = ["sst", "embeddings"])]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `cr` or `pg`.
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// WordNet dictionary directory.
    #[arg(long)]
    pub wordnet: PathBuf,
    /// `bert:<dir>` (masked LM) or `stub:<file>` (fixed lists).
    #[arg(long)]
    pub proposer: String,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Perturbation directory; adds `perturbed_traces.jsonl`.
    #[arg(long)]
    pub perturbations: Option<PathBuf>,
    /// Vector file for replacement words the checkpoint lacks.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub perturbations: PathBuf,
    /// Vector file for replacement words the checkpoint lacks.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Length,
    Polarity,
    Both,
}

#[derive(Debug, Args)]
pub struct TrojanArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub scheme: SchemeArg,
    /// Replacement polarity list (`positive|negative<TAB>word`).
    #[arg(long)]
    pub polarity_words: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Quality,
    Matching,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(value_enum)]
    pub kind: StudyKind,
    /// Output directory of an `audit` run.
    #[arg(long)]
    pub audit: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV with participant_id, question_id, choice.
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Audit output directories (repeatable).
    #[arg(long = "audit", required = true)]
    pub audits: Vec<PathBuf>,
}

/// Runs one parsed invocation. `arguments` is recorded in the manifest.
pub fn run(cli: &Cli, arguments: Vec<String>) -> Result<()> {
    let started = std::time::Instant::now();
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    config.validate()?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs: must be positive".into()));
        }
        // a second build in the same process fails; the first pool stays
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut m = RunManifest::start(
        cli.command.name(),
        arguments,
        serde_json::to_value(&config)?,
        config.seed,
    );
    if let Some(path) = &cli.config {
        m.input(path)?;
    }
    commands::dispatch(&cli.command, &config, &out, &mut m)?;
    m.finish(&out, started)
}

/// Parses `args` (program name first), runs, and returns the exit code:
/// 0 success, 1 usage or configuration, 2 data integrity, 3 external resource.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
