//! `csforge` command-line interface.
//!
//! Exit codes: 0 on success, 2 for usage or input validation errors, 3 for
//! runtime failures (transport, aborted runs, unwritable outputs). Every
//! parsed invocation writes a run manifest, whether it succeeds or not.

use crate::client::mock::{EchoClient, FixedClient, OracleClient};
use crate::client::{HttpClient, ModelClient};
use crate::cmi::{corpus_stats, CmiBucket, BUCKET_CONVENTION};
use crate::dataset::{
    self, align_translated, codeswitch_dataset, kfold_split, load_csqa, qa_sample, write_review_csv, DatasetError,
    DatasetManifest, FoldAssignment, MANIFEST_ID,
};
use crate::eval::{
    aggregate, evaluate_fold, render_csv, render_markdown, EvalConfig, EvalError, EvalRecord, FoldResult,
    PromptVariant, DEFAULT_CONCURRENCY, DEFAULT_MAX_TOKENS, DEFAULT_SAMPLES, DEFAULT_TEMPERATURE,
};
use crate::generate::{
    BilingualLexicon, EndpointGenerator, EndpointParams, GenerationSpec, GeneratorKind, LexiconGenerator,
    PromptTemplate, StemGenerator, DEFAULT_GENERATION_MAX_TOKENS, DEFAULT_MAX_ATTEMPTS,
};
use crate::langid::tag_utterance;
use crate::training::{emit_config, emit_manifest, training_examples, TrainConfigOverrides, TrainingError};
use crate::util::{write_jsonl, TOOL_VERSION};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::AbortThresholdExceeded { .. } => CliError::Runtime(e.to_string()),
            DatasetError::Csv(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::FoldAborted { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "csforge", version, about = "Code-switched MCQ dataset generation and majority-vote evaluation")]
pub struct Cli {
    /// JSON config file; keys may be top-level or nested under the subcommand name.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (defaults next to the primary output).
    #[arg(long, global = true)]
    pub run_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Code-mixing statistics of a JSONL corpus.
    Analyze(AnalyzeArgs),
    /// Code-switch question stems into a target CMI bucket.
    Generate(GenerateArgs),
    /// Seeded k-fold split into per-fold files.
    Split(SplitArgs),
    /// Majority-vote evaluation of fold files against a model or mock.
    Evaluate(EvaluateArgs),
    /// Mean / std summary table from results CSVs.
    Report(ReportArgs),
    /// One review pick per batch of questions.
    QaSample(QaSampleArgs),
    /// Fine-tuning manifest and config for one held-out fold.
    EmitTrain(EmitTrainArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Generate(_) => "generate",
            Command::Split(_) => "split",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
            Command::QaSample(_) => "qa-sample",
            Command::EmitTrain(_) => "emit-train",
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// low, medium or high.
    #[arg(long)]
    pub bucket: CmiBucket,
    #[arg(long, default_value = "lexicon")]
    pub generator: GeneratorKind,
    /// English<TAB>Hindi TSV, required for the lexicon generator.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Chat-completions URL, required for the endpoint generator.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Replaces the built-in instruction template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Keep endpoint outputs whatever their measured bucket (single attempt).
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hindi translation of the input (same ids); its stems are attached as `hindi_stem`.
    #[arg(long)]
    pub translated: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A fold file, or a directory of `fold_<i>.jsonl` files.
    #[arg(long)]
    pub dataset: PathBuf,
    /// english, hindi or codeswitched.
    #[arg(long, default_value = "english")]
    pub language: PromptVariant,
    #[arg(long, conflicts_with = "mock")]
    pub endpoint: Option<String>,
    /// Offline client: `oracle`, `oracle:<accuracy>`, `fixed:<text>` or `echo`.
    #[arg(long)]
    pub mock: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Row label in the results, e.g. Baseline, GPTgen, CMI2.
    #[arg(long)]
    pub config_name: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Items evaluated per fold (first N in file order); 0 evaluates all.
    #[arg(long)]
    pub eval_size: Option<usize>,
    /// Fold index for a single-file dataset (otherwise read from the file name).
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-item audit records (default: `<out>.records.jsonl`).
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Md,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results_dir: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ReportFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QaSampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmitTrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `folds.json` written by `split`.
    #[arg(long)]
    pub folds: PathBuf,
    #[arg(long)]
    pub hold_out: usize,
    /// Inline JSON object or path to a JSON file with config overrides.
    #[arg(long)]
    pub config_overrides: Option<String>,
    /// Stem shown in training prompts: codeswitched, english or hindi.
    #[arg(long)]
    pub stem_variant: Option<PromptVariant>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Flag > config file > default lookup for one subcommand.
struct Settings {
    file: Map<String, Value>,
    section: &'static str,
    resolved: Map<String, Value>,
}

impl Settings {
    fn load(path: Option<&Path>, section: &'static str) -> Result<Self, CliError> {
        let file = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(CliError::Usage("config file must hold a JSON object".into())),
                    Err(e) => return Err(CliError::Usage(format!("bad config {}: {e}", p.display()))),
                }
            }
        };
        Ok(Self {
            file,
            section,
            resolved: Map::new(),
        })
    }

    fn lookup(&self, key: &str) -> Option<&Value> {
        self.file
            .get(self.section)
            .and_then(|s| s.get(key))
            .or_else(|| self.file.get(key))
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: serde::de::DeserializeOwned + Serialize,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| CliError::Usage(format!("config key {key:?}: {e}")))?,
                None => default,
            },
        };
        self.resolved
            .insert(key.to_string(), serde_json::to_value(&value).unwrap_or(Value::Null));
        Ok(value)
    }

    fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: serde::de::DeserializeOwned + Serialize,
    {
        self.get(key, flag.map(Some), None)
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: String,
    resolved_config: Map<String, Value>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    seed: Option<u64>,
    tool_version: &'static str,
    started_at: String,
    duration_ms: u128,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    summary: Map<String, Value>,
}

#[derive(Default)]
struct Run {
    inputs: Vec<String>,
    outputs: Vec<String>,
    seed: Option<u64>,
    summary: Map<String, Value>,
}

impl Run {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }
}

fn default_manifest_path(cmd: &Command) -> PathBuf {
    let beside = |p: &Path, suffix: &str| {
        let mut s = p.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    match cmd {
        Command::Analyze(a) => beside(&a.report, ".run.json"),
        Command::Generate(a) => beside(&a.out, ".run.json"),
        Command::Split(a) => a.out_dir.join("split.run.json"),
        Command::Evaluate(a) => beside(&a.out, ".run.json"),
        Command::Report(a) => match &a.out {
            Some(o) => beside(o, ".run.json"),
            None => a.results_dir.join("report.run.json"),
        },
        Command::QaSample(a) => beside(&a.out, ".run.json"),
        Command::EmitTrain(a) => a.out_dir.join("emit-train.run.json"),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let name = cli.command.name();
    let mut run = Run::default();
    let mut settings = Settings::load(cli.config.as_deref(), name);
    let default_manifest = default_manifest_path(&cli.command);
    if let Some(parent) = default_manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        let _ = std::fs::create_dir_all(parent);
    }
    let result = match settings.as_mut() {
        Ok(s) => dispatch(&cli.command, s, &mut run),
        Err(e) => Err(CliError::Usage(e.to_string())),
    };
    let exit_code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    let manifest = RunManifest {
        subcommand: name.to_string(),
        resolved_config: settings.map(|s| s.resolved).unwrap_or_default(),
        inputs: run.inputs,
        outputs: run.outputs,
        seed: run.seed,
        tool_version: TOOL_VERSION,
        started_at,
        duration_ms: started.elapsed().as_millis(),
        exit_code,
        error: result.err().map(|e| e.to_string()),
        summary: run.summary,
    };
    let path = cli.run_manifest.clone().unwrap_or(default_manifest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        let _ = std::fs::create_dir_all(parent);
    }
    if let Err(e) = std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap() + "\n") {
        log::warn!("could not write run manifest {}: {e}", path.display());
    }
    exit_code
}

fn dispatch(cmd: &Command, s: &mut Settings, run: &mut Run) -> Result<(), CliError> {
    match cmd {
        Command::Analyze(a) => analyze(a, run),
        Command::Generate(a) => generate(a, s, run),
        Command::Split(a) => split(a, s, run),
        Command::Evaluate(a) => evaluate(a, s, run),
        Command::Report(a) => report(a, run),
        Command::QaSample(a) => qa(a, s, run),
        Command::EmitTrain(a) => emit_train(a, s, run),
    }
}

fn load_input(path: &Path, run: &mut Run) -> Result<DatasetManifest, CliError> {
    run.input(path);
    Ok(load_csqa(path)?)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(runtime("cannot create output directory"))
}

fn analyze(a: &AnalyzeArgs, run: &mut Run) -> Result<(), CliError> {
    run.input(&a.input);
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.input.display())))?;
    let mut utterances = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| CliError::Usage(format!("line {}: malformed JSON: {e}", idx + 1)))?;
        if v.get("id").and_then(Value::as_str) == Some(MANIFEST_ID) {
            continue;
        }
        let body = v
            .get("cs_stem")
            .or_else(|| v.get("text"))
            .or_else(|| v.get("question").and_then(|q| q.get("stem")))
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Usage(format!("line {}: no cs_stem, text or question.stem", idx + 1)))?;
        let id = v
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("line-{}", idx + 1));
        utterances.push((id, tag_utterance(body)));
    }
    let stats = corpus_stats(utterances.iter().map(|(id, u)| (id.as_str(), u)));
    let hist = |b| stats.histogram.get(&b).copied().unwrap_or(0);
    let report = json!({
        "bucket_convention": BUCKET_CONVENTION,
        "n_utterances": stats.n_utterances,
        "mean_cmi": stats.mean_cmi,
        "histogram": {
            "low": hist(CmiBucket::Low),
            "medium": hist(CmiBucket::Medium),
            "high": hist(CmiBucket::High),
        },
        "items": stats.items,
    });
    std::fs::write(&a.report, serde_json::to_string_pretty(&report).unwrap() + "\n")
        .map_err(runtime("cannot write report"))?;
    run.output(&a.report);
    eprintln!("{} utterances, mean CMI {:.1}", stats.n_utterances, stats.mean_cmi);
    Ok(())
}

fn build_endpoint_client(url: &str, model: &str) -> Result<HttpClient, CliError> {
    HttpClient::new(url, model).map_err(runtime("cannot build HTTP client"))
}

fn generate(a: &GenerateArgs, s: &mut Settings, run: &mut Run) -> Result<(), CliError> {
    let seed = s.get("seed", a.seed, 0)?;
    run.seed = Some(seed);
    let mut spec = GenerationSpec::new(a.bucket, a.generator, seed);
    spec.max_attempts = s.get("max_attempts", a.max_attempts, DEFAULT_MAX_ATTEMPTS)?;
    spec.enforce_bucket = !s.get("no_filter", a.no_filter.then_some(true), false)?;
    if spec.max_attempts == 0 {
        return Err(CliError::Usage("--max-attempts must be at least 1".into()));
    }
    if !spec.enforce_bucket && a.generator == GeneratorKind::Lexicon {
        return Err(CliError::Usage("--no-filter only applies to the endpoint generator".into()));
    }
    let concurrency = s.get("concurrency", a.concurrency, DEFAULT_CONCURRENCY)?;
    s.resolved.insert("bucket".into(), a.bucket.as_str().into());
    s.resolved.insert("generator".into(), a.generator.as_str().into());

    let manifest = load_input(&a.input, run)?;
    let generator: Box<dyn StemGenerator> = match a.generator {
        GeneratorKind::Lexicon => {
            let path = s
                .get_opt("lexicon", a.lexicon.clone())?
                .ok_or_else(|| CliError::Usage("--lexicon is required for the lexicon generator".into()))?;
            run.input(&path);
            let lexicon = BilingualLexicon::load(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Box::new(LexiconGenerator { lexicon })
        }
        GeneratorKind::Endpoint => {
            let url = s
                .get_opt("endpoint", a.endpoint.clone())?
                .ok_or_else(|| CliError::Usage("--endpoint is required for the endpoint generator".into()))?;
            let model = s.get("model", a.model.clone(), "gpt-3.5-turbo".to_string())?;
            let template = match s.get_opt("template", a.template.clone())? {
                Some(p) => {
                    run.input(&p);
                    PromptTemplate::load(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                }
                None => PromptTemplate::builtin(),
            };
            s.resolved.insert("template_sha256".into(), template.sha256.clone().into());
            let params = EndpointParams {
                temperature: s.get("temperature", a.temperature, DEFAULT_TEMPERATURE)?,
                max_tokens: s.get("max_tokens", a.max_tokens, DEFAULT_GENERATION_MAX_TOKENS)?,
            };
            Box::new(EndpointGenerator {
                client: build_endpoint_client(&url, &model)?,
                template,
                params,
            })
        }
    };

    let out = codeswitch_dataset(&manifest, generator.as_ref(), &spec, concurrency)?;
    out.manifest.write(&a.out).map_err(runtime("cannot write output"))?;
    run.output(&a.out);
    let mut dropped_path = a.out.clone().into_os_string();
    dropped_path.push(".dropped.jsonl");
    let dropped_path = PathBuf::from(dropped_path);
    write_jsonl(&dropped_path, &out.dropped).map_err(runtime("cannot write drop list"))?;
    run.output(&dropped_path);
    run.summary.insert("kept".into(), out.manifest.len().into());
    run.summary.insert("dropped".into(), out.dropped.len().into());
    eprintln!("kept {} of {} items in bucket {}", out.manifest.len(), manifest.len(), a.bucket);
    Ok(())
}

fn split(a: &SplitArgs, s: &mut Settings, run: &mut Run) -> Result<(), CliError> {
    let k = s.get("k", a.k, 5)?;
    let seed = s.get("seed", a.seed, 0)?;
    run.seed = Some(seed);
    let mut manifest = load_input(&a.input, run)?;
    if let Some(t) = &a.translated {
        let translated = load_input(t, run)?;
        manifest = align_translated(&translated, &manifest)?;
    }
    let folds = kfold_split(&manifest, k, seed)?;
    ensure_dir(&a.out_dir)?;
    for fold in 0..k {
        let path = a.out_dir.join(format!("fold_{fold}.jsonl"));
        manifest
            .subset(|item| folds.fold_of(&item.id) == Some(fold))
            .write(&path)
            .map_err(runtime("cannot write fold"))?;
        run.output(&path);
    }
    let folds_path = a.out_dir.join("folds.json");
    std::fs::write(&folds_path, serde_json::to_string_pretty(&folds).unwrap() + "\n")
        .map_err(runtime("cannot write folds.json"))?;
    run.output(&folds_path);
    run.summary.insert("fold_sizes".into(), json!(folds.sizes()));
    Ok(())
}

fn parse_mock(spec: &str, items: &[dataset::McqItem], variant: PromptVariant, seed: u64) -> Result<Box<dyn ModelClient>, CliError> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "oracle" => {
            let accuracy = if arg.is_empty() {
                1.0
            } else {
                arg.parse::<f64>()
                    .ok()
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| CliError::Usage(format!("bad oracle accuracy {arg:?}")))?
            };
            Ok(Box::new(OracleClient::new(items, variant, accuracy, seed)))
        }
        "fixed" => Ok(Box::new(FixedClient(arg.to_string()))),
        "echo" => Ok(Box::new(EchoClient)),
        other => Err(CliError::Usage(format!("unknown mock {other:?} (expected oracle, oracle:<p>, fixed:<text> or echo)"))),
    }
}

fn fold_index_from_name(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("fold_")?.parse().ok()
}

#[derive(Serialize)]
struct RecordLine<'a> {
    config: &'a str,
    fold: usize,
    #[serde(flatten)]
    record: &'a EvalRecord,
}

fn evaluate(a: &EvaluateArgs, s: &mut Settings, run: &mut Run) -> Result<(), CliError> {
    let samples = s.get("samples", a.samples, DEFAULT_SAMPLES)?;
    if samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let config = EvalConfig {
        config_name: s.get("config_name", a.config_name.clone(), "Baseline".to_string())?,
        n_samples: samples,
        temperature: s.get("temperature", a.temperature, DEFAULT_TEMPERATURE)?,
        max_tokens: s.get("max_tokens", a.max_tokens, DEFAULT_MAX_TOKENS)?,
        concurrency: s.get("concurrency", a.concurrency, DEFAULT_CONCURRENCY)?,
    };
    let eval_size = s.get("eval_size", a.eval_size, 50)?;
    let seed = s.get("seed", a.seed, 0)?;
    run.seed = Some(seed);
    s.resolved.insert("language".into(), a.language.as_str().into());

    let fold_files: Vec<(usize, PathBuf)> = if a.dataset.is_dir() {
        let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(&a.dataset)
            .map_err(|e| CliError::Usage(format!("{}: {e}", a.dataset.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .filter_map(|p| fold_index_from_name(&p).map(|i| (i, p)))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Usage(format!("no fold_<i>.jsonl files in {}", a.dataset.display())));
        }
        files
    } else {
        let idx = a.fold.or_else(|| fold_index_from_name(&a.dataset)).unwrap_or(0);
        vec![(idx, a.dataset.clone())]
    };
    let mut folds = Vec::with_capacity(fold_files.len());
    for (idx, path) in &fold_files {
        let mut m = load_input(path, run)?;
        if eval_size > 0 {
            m.items.truncate(eval_size);
        }
        folds.push((*idx, m));
    }

    let endpoint = s.get_opt("endpoint", a.endpoint.clone())?;
    let mock = s.get_opt("mock", a.mock.clone())?;
    let all_items: Vec<dataset::McqItem> = folds.iter().flat_map(|(_, m)| m.items.iter().cloned()).collect();
    let client: Box<dyn ModelClient> = match (endpoint, mock) {
        (Some(url), None) => {
            let model = s.get("model", a.model.clone(), "default".to_string())?;
            Box::new(build_endpoint_client(&url, &model)?)
        }
        (None, Some(m)) => parse_mock(&m, &all_items, a.language, seed)?,
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --endpoint or --mock, not both".into())),
        (None, None) => return Err(CliError::Usage("one of --endpoint or --mock is required".into())),
    };

    let mut results: Vec<FoldResult> = Vec::new();
    let mut records_out = Vec::new();
    for (idx, m) in &folds {
        let (result, records) = evaluate_fold(client.as_ref(), &m.items, a.language, *idx, &config)?;
        eprintln!(
            "{} {} fold {}: {}/{} correct ({:.2}%)",
            config.config_name,
            a.language,
            idx,
            result.n_correct,
            result.n_items,
            result.accuracy * 100.0
        );
        results.push(result);
        records_out.push((*idx, records));
    }

    let mut w = csv::Writer::from_path(&a.out).map_err(runtime("cannot write results"))?;
    for r in &results {
        w.serialize(r).map_err(runtime("cannot write results"))?;
    }
    w.flush().map_err(runtime("cannot write results"))?;
    run.output(&a.out);

    let records_path = a.records.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".records.jsonl");
        PathBuf::from(p)
    });
    let lines = records_out.iter().flat_map(|(fold, recs)| {
        recs.iter().map(|record| RecordLine {
            config: &config.config_name,
            fold: *fold,
            record,
        })
    });
    write_jsonl(&records_path, lines).map_err(runtime("cannot write records"))?;
    run.output(&records_path);
    run.summary.insert("folds".into(), serde_json::to_value(&results).unwrap());
    Ok(())
}

fn read_results(dir: &Path, run: &mut Run) -> Result<Vec<FoldResult>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let mut r = csv::Reader::from_path(&f).map_err(|e| CliError::Usage(format!("{}: {e}", f.display())))?;
        let headers = r.headers().map_err(|e| CliError::Usage(format!("{}: {e}", f.display())))?;
        if headers.iter().ne(["config", "language", "fold", "n_items", "n_correct", "accuracy"]) {
            log::warn!("skipping {}: not a results file", f.display());
            continue;
        }
        run.input(&f);
        for row in r.deserialize::<FoldResult>() {
            out.push(row.map_err(|e| CliError::Usage(format!("{}: {e}", f.display())))?);
        }
    }
    Ok(out)
}

fn report(a: &ReportArgs, run: &mut Run) -> Result<(), CliError> {
    let folds = read_results(&a.results_dir, run)?;
    if folds.is_empty() {
        return Err(CliError::Usage(format!("no fold results found in {}", a.results_dir.display())));
    }
    let rows = aggregate(&folds);
    let text = match a.format {
        ReportFormat::Markdown | ReportFormat::Md => render_markdown(&rows),
        ReportFormat::Csv => render_csv(&rows).map_err(runtime("cannot render csv"))?,
    };
    match &a.out {
        Some(p) => {
            std::fs::write(p, &text).map_err(runtime("cannot write report"))?;
            run.output(p);
        }
        None => print!("{text}"),
    }
    run.summary.insert("rows".into(), serde_json::to_value(&rows).unwrap());
    Ok(())
}

fn qa(a: &QaSampleArgs, s: &mut Settings, run: &mut Run) -> Result<(), CliError> {
    let every = s.get("every", a.every, 50)?;
    let seed = s.get("seed", a.seed, 0)?;
    run.seed = Some(seed);
    let manifest = load_input(&a.input, run)?;
    let rows = qa_sample(&manifest, every, seed)?;
    write_review_csv(&rows, &a.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    run.output(&a.out);
    run.summary.insert("rows".into(), rows.len().into());
    Ok(())
}

fn parse_overrides(raw: &str) -> Result<TrainConfigOverrides, CliError> {
    let text = if raw.trim_start().starts_with('{') {
        raw.to_string()
    } else {
        std::fs::read_to_string(raw).map_err(|e| CliError::Usage(format!("cannot read overrides {raw}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config overrides: {e}")))
}

fn emit_train(a: &EmitTrainArgs, s: &mut Settings, run: &mut Run) -> Result<(), CliError> {
    let variant = s.get("stem_variant", a.stem_variant, PromptVariant::CodeSwitched)?;
    let overrides = match s.get_opt("config_overrides", a.config_overrides.clone())? {
        Some(raw) => parse_overrides(&raw)?,
        None => TrainConfigOverrides::default(),
    };
    run.seed = overrides.seed;
    let manifest = load_input(&a.input, run)?;
    run.input(&a.folds);
    let folds = FoldAssignment::load(&a.folds)?;
    if a.hold_out >= folds.k {
        return Err(CliError::Usage(format!("--hold-out {} is out of range for k = {}", a.hold_out, folds.k)));
    }
    // validate everything before writing anything
    crate::training::TrainConfig::with_overrides(overrides.clone())?;
    let examples = training_examples(&manifest, &folds, a.hold_out, variant)?;

    ensure_dir(&a.out_dir)?;
    let manifest_path = a.out_dir.join("train.jsonl");
    let n = emit_manifest(&manifest, &folds, a.hold_out, variant, &manifest_path)?;
    debug_assert_eq!(n, examples.len());
    run.output(&manifest_path);
    let config_path = a.out_dir.join("train_config.json");
    let emitted = emit_config(overrides, Some(&manifest_path), &config_path)?;
    run.output(&config_path);

    let held_out = folds.ids_in(a.hold_out);
    let prompts: std::collections::HashSet<&str> = examples.iter().map(|e| e.prompt.as_str()).collect();
    let mut leaked = 0usize;
    for item in manifest.items.iter().filter(|i| held_out.contains(i.id.as_str())) {
        if prompts.contains(crate::eval::build_prompt(item, variant)?.as_str()) {
            leaked += 1;
        }
    }
    run.summary.insert("examples".into(), n.into());
    run.summary.insert("held_out_items".into(), held_out.len().into());
    run.summary.insert("leaked_prompts".into(), leaked.into());
    run.summary.insert("config".into(), serde_json::to_value(&emitted).unwrap());
    Ok(())
}
