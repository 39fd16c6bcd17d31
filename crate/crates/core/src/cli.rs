//! The `fha` command line.
//!
//! Exit codes: 0 on success, 1 on runtime or partial failure, 2 on usage or
//! validation errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_dataset, make_synthetic_task, parse_rotation, save_dataset, Dataset, TaskSpec};
use crate::error::FhaError;
use crate::harness::{
    dump_embedding, parse_results, run_experiment, run_experiment_on, summarize, ExperimentOptions, Method,
    MethodConfig, ResultSink,
};
use crate::nn::model_file::{ModelFile, MODEL_FORMAT};
use crate::nn::Mlp;
use crate::trainers::{train_source, FeatureClassifier, SourceConfig, TargetModel, TohanConfig};

pub const SOURCE_FILE: &str = "source.fhd";
pub const TARGET_FILE: &str = "target.fhd";
pub const TARGET_TEST_FILE: &str = "target_test.fhd";

#[derive(Debug, Parser)]
#[command(name = "fha", version, about = "Few-shot hypothesis adaptation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate source, target and target-test datasets.
    GenData(GenDataArgs),
    /// Train a source model and save it as a model file.
    TrainSource(TrainSourceArgs),
    /// Run methods over shots and seeds, writing one result per line.
    Run(RunArgs),
    /// Summarize a results file as mean±std per method and shot count.
    Summarize(SummarizeArgs),
    /// Export a 2D projection of a model's features.
    DumpEmbed(DumpEmbedArgs),
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    /// Task preset: rot<deg>, pair-rot<deg> or identity.
    #[arg(long, default_value = "rot40")]
    pub task: String,
    /// Task spec as a JSON file; overrides --task.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override the target rotation, in degrees (`40`, `40deg`).
    #[arg(long, value_parser = rotation_arg)]
    pub rotation: Option<f64>,
    /// Seed of the data generator.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

fn rotation_arg(s: &str) -> Result<f64, String> {
    parse_rotation(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Data generator seed; same as --data-seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainSourceArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Directory with source.fhd; when absent the task is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Source training settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (JSON). Command-line grid flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Directory with source.fhd, target.fhd and target_test.fhd; when
    /// absent the task is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated methods (wa, ft, shot, sfada, tfada, stfada, tohan).
    #[arg(long = "method", value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Comma-separated shot counts, each in 1..=7.
    #[arg(long, value_delimiter = ',')]
    pub shots: Vec<usize>,
    /// Seeds as an inclusive range `a..b` or a comma list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Single seed; same as `--seeds N`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Results file (one JSON object per line); truncated first.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-run trace files.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryFormat {
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Results file written by `run`.
    pub results: PathBuf,
    #[arg(long, value_enum, default_value_t = SummaryFormat::Table)]
    pub format: SummaryFormat,
    /// Also write the CSV table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpEmbedArgs {
    /// Model file (source or target).
    #[arg(long)]
    pub model: PathBuf,
    /// Directory with the dataset files to embed.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV file to write; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A whole experiment as one JSON document. Every field is optional and
/// defaults to the published hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskRef,
    pub methods: Vec<Method>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub source: SourceConfig,
    pub finetune: crate::trainers::FinetuneConfig,
    pub tohan: TohanConfig,
    pub out: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskRef::Preset("rot40".into()),
            methods: Method::ALL.to_vec(),
            shots: vec![1],
            seeds: (0..10).collect(),
            jobs: 1,
            source: SourceConfig::default(),
            finetune: Default::default(),
            tohan: TohanConfig::default(),
            out: None,
            trace_dir: None,
        }
    }
}

/// A preset name or a full task spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskRef {
    Preset(String),
    Spec(TaskSpec),
}

impl TaskRef {
    pub fn resolve(&self) -> Result<TaskSpec, FhaError> {
        let spec = match self {
            TaskRef::Preset(name) => TaskSpec::preset(name)?,
            TaskRef::Spec(s) => s.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, FhaError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| FhaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FhaError> {
        self.task.resolve()?;
        if self.methods.is_empty() || self.shots.is_empty() || self.seeds.is_empty() {
            return Err(FhaError::Config("methods, shots and seeds must be nonempty".into()));
        }
        if let Some(n) = self.shots.iter().find(|&&n| n == 0 || n > crate::data::MAX_SHOTS) {
            return Err(FhaError::Config(format!("shot count {n} outside 1..=7")));
        }
        self.source.validate()?;
        self.tohan.validate()?;
        Ok(())
    }
}

/// Parses `0..9` (inclusive) or `1,4,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, FhaError> {
    let bad = || FhaError::InvalidArgument(format!("invalid seed list {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<FhaError> for CliError {
    fn from(e: FhaError) -> Self {
        match e {
            FhaError::InvalidSpec(_)
            | FhaError::InvalidArgument(_)
            | FhaError::Config(_)
            | FhaError::Protocol(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_input(path: &Path, what: &str) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn resolve_task(args: &TaskArgs, seed_override: Option<u64>) -> CliResult<TaskSpec> {
    let mut spec = match &args.spec {
        Some(p) => serde_json::from_str::<TaskSpec>(&read_input(p, "task spec")?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => TaskSpec::preset(&args.task)?,
    };
    if let Some(deg) = args.rotation {
        spec.rotation_deg = deg;
        spec.name = format!("{}@{deg}deg", spec.name);
    }
    spec.seed = seed_override.unwrap_or(args.data_seed);
    spec.validate()?;
    Ok(spec)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn cmd_gen_data(args: &GenDataArgs) -> CliResult {
    let spec = resolve_task(&args.task, args.seed)?;
    let (source, target, target_test) = make_synthetic_task(&spec)?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut stdout = std::io::stdout().lock();
    for (name, ds) in [
        (SOURCE_FILE, &source),
        (TARGET_FILE, &target),
        (TARGET_TEST_FILE, &target_test),
    ] {
        let path = args.out.join(name);
        save_dataset(ds, &path).map_err(|e| io_err(&path, e))?;
        let _ = writeln!(stdout, "{}  {}", sha256_file(&path)?, path.display());
    }
    Ok(())
}

fn load_from(dir: &Path, name: &str) -> CliResult<Dataset> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::Usage(format!("missing dataset {}", path.display())));
    }
    load_dataset(&path).map_err(|e| io_err(&path, e))
}

fn cmd_train_source(args: &TrainSourceArgs) -> CliResult {
    let cfg = match &args.config {
        Some(p) => serde_json::from_str::<SourceConfig>(&read_input(p, "config")?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SourceConfig::default(),
    };
    cfg.validate()?;
    let (source, task) = match &args.data {
        Some(dir) => (load_from(dir, SOURCE_FILE)?, dir.display().to_string()),
        None => {
            let spec = resolve_task(&args.task, None)?;
            (make_synthetic_task(&spec)?.0, spec.name)
        }
    };
    let h = train_source(&source, &cfg, args.seed, &task)?;
    let meta = serde_json::to_value(h.meta()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mf = ModelFile {
        format: MODEL_FORMAT.into(),
        kind: "source".into(),
        seed: args.seed,
        encoder: h.encoder().into(),
        classifier: h.classifier().into(),
        meta: Some(meta),
    };
    mf.save(&args.out).map_err(|e| io_err(&args.out, e))?;
    println!(
        "source accuracy: train {:.4}, held-out {:.4}",
        h.meta().train_accuracy,
        h.meta().test_accuracy
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_json(&read_input(p, "config")?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig {
            task: TaskRef::Spec(resolve_task(&args.task, None)?),
            ..RunConfig::default()
        },
    };
    if args.config.is_some() && (args.task.spec.is_some() || args.task.rotation.is_some()) {
        cfg.task = TaskRef::Spec(resolve_task(&args.task, None)?);
    }
    if !args.methods.is_empty() {
        cfg.methods = args
            .methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_, FhaError>>()?;
    }
    if !args.shots.is_empty() {
        cfg.shots = args.shots.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.trace_dir.is_some() {
        cfg.trace_dir = args.trace_dir.clone();
    }
    if args.jobs != 1 {
        cfg.jobs = args.jobs;
    }
    cfg.validate()?;
    let task = cfg.task.resolve()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results.jsonl"));
    let sink = ResultSink::create(&out).map_err(|e| io_err(&out, e))?;
    let methods = MethodConfig {
        source: cfg.source.clone(),
        finetune: cfg.finetune.clone(),
        tohan: cfg.tohan.clone(),
    };
    let opts = ExperimentOptions {
        jobs: cfg.jobs,
        trace_dir: cfg.trace_dir.clone(),
        discard_traces: true,
    };
    let outcomes = match &args.data {
        Some(dir) => {
            let data = (
                load_from(dir, SOURCE_FILE)?,
                load_from(dir, TARGET_FILE)?,
                load_from(dir, TARGET_TEST_FILE)?,
            );
            let name = dir
                .file_name()
                .map_or_else(|| task.name.clone(), |n| n.to_string_lossy().into_owned());
            run_experiment_on(&name, &data, &cfg.methods, &cfg.shots, &cfg.seeds, &methods, &opts, Some(&sink))?
        }
        None => run_experiment(&task, &cfg.methods, &cfg.shots, &cfg.seeds, &methods, &opts, Some(&sink))?,
    };
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    eprintln!(
        "{} runs, {} failed; results in {}",
        outcomes.len(),
        failed,
        out.display()
    );
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} runs failed")));
    }
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> CliResult {
    let text = read_input(&args.results, "results file")?;
    let parsed = parse_results(&text);
    for (line, reason) in &parsed.malformed {
        eprintln!("{}:{line}: skipped malformed record: {reason}", args.results.display());
    }
    for e in &parsed.errors {
        eprintln!("skipped failed run {} n_t={} seed={}: {}", e.method, e.n_t, e.seed, e.error);
    }
    if parsed.results.is_empty() {
        return Err(CliError::Runtime("no results to summarize".into()));
    }
    let table = summarize(&parsed.results)?;
    match args.format {
        SummaryFormat::Table => print!("{}", table.to_table()),
        SummaryFormat::Csv => print!("{}", table.to_csv()),
    }
    if let Some(p) = &args.out {
        fs::write(p, table.to_csv()).map_err(|e| io_err(p, e))?;
    }
    if !parsed.malformed.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} malformed lines skipped",
            parsed.malformed.len()
        )));
    }
    Ok(())
}

fn cmd_dump_embed(args: &DumpEmbedArgs) -> CliResult {
    let mf = ModelFile::from_json(&read_input(&args.model, "model file")?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.model.display())))?;
    let encoder = Mlp::try_from(mf.encoder)?;
    let classifier = Mlp::try_from(mf.classifier)?;
    let model = TargetModel::new(encoder, classifier)?;
    let mut sets = Vec::new();
    for (name, domain) in [
        (SOURCE_FILE, "source"),
        (TARGET_FILE, "target"),
        (TARGET_TEST_FILE, "target_test"),
    ] {
        if args.data.join(name).exists() {
            sets.push((domain, load_from(&args.data, name)?));
        }
    }
    if sets.is_empty() {
        return Err(CliError::Usage(format!("no dataset files in {}", args.data.display())));
    }
    let refs: Vec<(&str, &Dataset)> = sets.iter().map(|(d, ds)| (*d, ds)).collect();
    let emb = dump_embedding(&model, &refs)?;
    if emb.degenerate {
        eprintln!("warning: degenerate feature covariance; columns are the first two raw features");
    }
    match &args.out {
        Some(p) => fs::write(p, emb.to_csv()).map_err(|e| io_err(p, e))?,
        None => print!("{}", emb.to_csv()),
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainSource(a) => cmd_train_source(a),
        Command::Run(a) => cmd_run(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::DumpEmbed(a) => cmd_dump_embed(a),
    }
}

/// Entry point of the `fha` binary. Log verbosity comes from `FHA_LOG`.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FHA_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
