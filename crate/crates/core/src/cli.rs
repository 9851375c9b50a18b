//! The `har` command-line tool.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 backend error.
//! Data goes to `--out` or standard output; diagnostics go to standard error.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::action::{parse_action_with, ParseOptions};
use crate::client::{
    Cassette, ClientError, EndpointDescriptor, HttpCompletion, RecordingClient, ReplayClient, RetryPolicy,
    TextCompletion,
};
use crate::episode::{load_corpus, load_predictions, CorpusError, CorpusIndex, Episode, PredictionRecord};
use crate::geom::{Point, ScreenResolution};
use crate::grpo::{advantages, CandidateGroup};
use crate::jsonl::{self, FileHeader, JsonlError};
use crate::judge::{JudgeBackend, JudgeError, MemoryJudge, DEFAULT_OVERLAP_THRESHOLD};
use crate::metrics::{
    emit_report, episode_metrics, grounding_metrics, ClickRule, GroundingPrediction, GroundingQuery, MetricsError,
    ReportFormat, StepRule,
};
use crate::pipeline::{
    build_reflection_set, mine_hard_samples, mix_tasks, synthesize_act2sum, synthesize_guidelines, HardSample,
    MiningConfig, PipelineError, StepKey, DEFAULT_GROUNDING_RATIO,
};
use crate::prompt::{FormatPolicy, PromptError, PromptKind, TemplateSet};
use crate::reward::{coord_action_reward, euclid, normalized_distance, RewardConfig, RewardError, TextMatch};
use crate::score::{ScoreConfig, ScoreError, ScoreRecord, Scorer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        data(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        data(e)
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Cassette(_) => data(e),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::InvalidThreshold(_) => CliError::Usage(e.to_string()),
            JudgeError::Prompt(p) => p.into(),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidThreshold(_) | MetricsError::UnknownRule(_) => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Judge(j) => j.into(),
            ScoreError::Unsupported(_) | ScoreError::Config(_) => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::TeacherUnreachable(_)
            | PipelineError::CassetteMiss { .. }
            | PipelineError::Guidelines(_)
            | PipelineError::NoSummaryTag => CliError::Backend(e.to_string()),
            PipelineError::InvalidRatio(_) | PipelineError::InvalidBatchSize(_) => CliError::Usage(e.to_string()),
            PipelineError::Prompt(p) => p.into(),
            PipelineError::Metrics(m) => m.into(),
            other => data(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "har",
    version,
    about = "Rewards, data pipeline and evaluation for reasoning GUI agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate action strings, corpus files or prediction files.
    Parse(ParseArgs),
    /// Score predictions with the hybrid reward.
    Score(ScoreArgs),
    /// Group rewards and compute group-relative advantages.
    Advantages(AdvantagesArgs),
    /// Collect steps whose prediction failed.
    Mine(MineArgs),
    /// Synthesize guidelines for hard samples and render reflection prompts.
    ReflectBuild(ReflectArgs),
    /// Summarize every gold action of a corpus.
    Act2sum(Act2SumArgs),
    /// Interleave episodic and grounding tasks into batches.
    Mix(MixArgs),
    /// Compute benchmark metrics.
    Eval(EvalArgs),
    /// Sample the coordinate reward along a ray away from the target.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Remote,
    Fallback,
    Replay,
    /// Do not judge memory; the memory term is 0.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatKind {
    InferenceS2,
    InferenceS1,
    Reflection,
}

impl From<FormatKind> for PromptKind {
    fn from(k: FormatKind) -> Self {
        match k {
            FormatKind::InferenceS2 => PromptKind::InferenceS2,
            FormatKind::InferenceS1 => PromptKind::InferenceS1,
            FormatKind::Reflection => PromptKind::Reflection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Step,
    Episode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Diagonal,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output file (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// TOML file with tau_norm, tau_abs_1, tau_abs_2, gamma, text_match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau_norm: Option<f64>,
    #[arg(long)]
    pub tau_abs_1: Option<f64>,
    #[arg(long)]
    pub tau_abs_2: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl RewardArgs {
    fn resolve(&self) -> Result<RewardConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RewardConfig::load(p)?,
            None => RewardConfig::default(),
        };
        if let Some(v) = self.tau_norm {
            cfg.tau_norm = v;
        }
        if let Some(v) = self.tau_abs_1 {
            cfg.tau_abs_1 = v;
        }
        if let Some(v) = self.tau_abs_2 {
            cfg.tau_abs_2 = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// Memory judge backend.
    #[arg(long, value_enum, default_value = "fallback")]
    pub backend: BackendKind,
    /// Cassette file: read for replay, appended to when recording remote calls.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Token-overlap threshold for the fallback judge.
    #[arg(long, default_value_t = DEFAULT_OVERLAP_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct TeacherArgs {
    /// Teacher backend: `replay` (needs --cassette) or `remote`.
    #[arg(long, value_enum, default_value = "replay")]
    pub backend: BackendKind,
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// An action string to validate (repeatable).
    #[arg(long = "action")]
    pub actions: Vec<String>,
    /// File with one action per line.
    #[arg(long)]
    pub actions_file: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Accept lower- or mixed-case action keywords.
    #[arg(long)]
    pub case_insensitive: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub reward: RewardArgs,
    #[command(flatten)]
    pub judge: JudgeArgs,
    /// Output format the predictions must follow.
    #[arg(long, value_enum, default_value = "inference-s2")]
    pub format_kind: FormatKind,
    /// Require canonical tag order and no stray text.
    #[arg(long)]
    pub strict_format: bool,
    #[arg(long)]
    pub case_insensitive: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct AdvantagesArgs {
    /// Rewards file written by `score`.
    #[arg(long)]
    pub rewards: PathBuf,
    #[arg(long, value_enum, default_value = "step")]
    pub group_by: GroupBy,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Click rule: in-bbox, norm[:t] or bbox-else-norm[:t].
    #[arg(long, default_value = "bbox-else-norm:0.1")]
    pub rule: ClickRule,
    #[arg(long, value_enum, default_value = "inference-s2")]
    pub format_kind: FormatKind,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ReflectArgs {
    /// Hard-sample file written by `mine`.
    #[arg(long)]
    pub hard: PathBuf,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct Act2SumArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Line-delimited episodic training records.
    #[arg(long)]
    pub episodic: PathBuf,
    /// Line-delimited grounding training records.
    #[arg(long)]
    pub grounding: PathBuf,
    /// Share of grounding items per batch.
    #[arg(long, default_value_t = DEFAULT_GROUNDING_RATIO)]
    pub ratio: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "bbox-else-norm:0.1")]
    pub rule: ClickRule,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormatArg,
    /// Grounding queries (`query_id`, `description`, `width`, `height`, `target_bbox`).
    #[arg(long, requires = "grounding_predictions")]
    pub grounding_queries: Option<PathBuf>,
    #[arg(long, requires = "grounding_queries")]
    pub grounding_predictions: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormatArg {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, default_value_t = 1000)]
    pub width: u32,
    #[arg(long, default_value_t = 2000)]
    pub height: u32,
    /// Target x (screen center when omitted).
    #[arg(long)]
    pub gold_x: Option<u32>,
    #[arg(long)]
    pub gold_y: Option<u32>,
    #[arg(long, value_enum, default_value = "x")]
    pub axis: Axis,
    /// Largest pixel offset sampled.
    #[arg(long, default_value_t = 300)]
    pub max_distance: u32,
    #[arg(long, default_value_t = 1)]
    pub step: u32,
    #[command(flatten)]
    pub reward: RewardArgs,
    #[command(flatten)]
    pub out: OutArg,
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(format!("sha256:{}", hex::encode(Sha256::digest(&bytes))))
}

fn digests(inputs: &[(&str, &Path)]) -> Result<BTreeMap<String, String>, CliError> {
    inputs
        .iter()
        .map(|(name, p)| Ok((name.to_string(), file_digest(p)?)))
        .collect()
}

fn emit(out: &OutArg, text: &str) -> Result<(), CliError> {
    match &out.out {
        Some(p) => std::fs::write(p, text).map_err(|e| data(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(data)
        }
    }
}

fn emit_records<T: Serialize>(out: &OutArg, header: &FileHeader, records: &[T]) -> Result<(), CliError> {
    emit(out, &jsonl::to_string(Some(header), records))
}

fn retry_policy() -> RetryPolicy {
    RetryPolicy::default()
}

const MAX_IN_FLIGHT: usize = 8;

/// Builds a completion client for `remote` or `replay`; `prefix` names the env variables.
fn completion_client(
    backend: BackendKind,
    cassette: Option<&Path>,
    prefix: &str,
) -> Result<Arc<dyn TextCompletion>, CliError> {
    match backend {
        BackendKind::Replay => {
            let path = cassette.ok_or_else(|| CliError::Usage("--backend replay needs --cassette".into()))?;
            Ok(Arc::new(
                ReplayClient::load(path).map_err(|e| data(format!("{}: {e}", path.display())))?,
            ))
        }
        BackendKind::Remote => {
            let endpoint = EndpointDescriptor::from_env(prefix)
                .ok_or_else(|| CliError::Usage(format!("--backend remote needs {prefix}_ENDPOINT")))?;
            let live = HttpCompletion::new(endpoint, MAX_IN_FLIGHT, retry_policy());
            match cassette {
                Some(path) => {
                    let c = Cassette::open_for_record(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
                    Ok(Arc::new(RecordingClient::new(live, Arc::new(c))))
                }
                None => Ok(Arc::new(live)),
            }
        }
        other => Err(CliError::Usage(format!(
            "backend `{}` cannot serve this command",
            other.to_possible_value().expect("value enum").get_name()
        ))),
    }
}

fn backend_name(b: BackendKind) -> &'static str {
    match b {
        BackendKind::Remote => "remote",
        BackendKind::Fallback => "fallback",
        BackendKind::Replay => "replay",
        BackendKind::None => "none",
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse(a) => cmd_parse(a),
        Command::Score(a) => cmd_score(a),
        Command::Advantages(a) => cmd_advantages(a),
        Command::Mine(a) => cmd_mine(a),
        Command::ReflectBuild(a) => cmd_reflect_build(a),
        Command::Act2sum(a) => cmd_act2sum(a),
        Command::Mix(a) => cmd_mix(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_parse(a: ParseArgs) -> Result<(), CliError> {
    let opts = ParseOptions {
        case_insensitive_keywords: a.case_insensitive,
    };
    if a.actions.is_empty() && a.actions_file.is_none() && a.corpus.is_none() && a.predictions.is_none() {
        return Err(CliError::Usage(
            "nothing to check: pass --action, --actions-file, --corpus or --predictions".into(),
        ));
    }
    let mut report = Vec::new();
    for (i, s) in a.actions.iter().enumerate() {
        let act = parse_action_with(s, opts).map_err(|e| data(format!("--action #{}: {e}", i + 1)))?;
        report.push(act.to_string());
    }
    if let Some(path) = &a.actions_file {
        let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            parse_action_with(line, opts).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            n += 1;
        }
        report.push(format!("{}: {n} actions ok", path.display()));
    }
    let mut corpus = None;
    if let Some(path) = &a.corpus {
        let c = load_corpus(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let steps: usize = c.iter().map(Episode::len).sum();
        report.push(format!("{}: {} episodes, {steps} steps ok", path.display(), c.len()));
        corpus = Some(c);
    }
    if let Some(path) = &a.predictions {
        let preds = load_predictions(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        if let Some(c) = &corpus {
            let index = CorpusIndex::new(c);
            if let Some(p) = preds
                .iter()
                .find(|p| index.resolve(&p.episode_id, p.step_index).is_none())
            {
                return Err(data(format!(
                    "{}: prediction for {} step {} matches no corpus step",
                    path.display(),
                    p.episode_id,
                    p.step_index
                )));
            }
        }
        report.push(format!("{}: {} predictions ok", path.display(), preds.len()));
    }
    report.push(String::new());
    emit(&OutArg { out: None }, &report.join("\n"))
}

fn load_inputs(corpus: &Path, predictions: &Path) -> Result<(Vec<Episode>, Vec<PredictionRecord>), CliError> {
    let c = load_corpus(corpus).map_err(|e| data(format!("{}: {e}", corpus.display())))?;
    let p = load_predictions(predictions).map_err(|e| data(format!("{}: {e}", predictions.display())))?;
    Ok((c, p))
}

fn cmd_score(a: ScoreArgs) -> Result<(), CliError> {
    let reward = a.reward.resolve()?;
    let cfg = ScoreConfig {
        reward,
        output_kind: a.format_kind.into(),
        format: FormatPolicy {
            strict: a.strict_format,
            case_insensitive_keywords: a.case_insensitive,
        },
    };
    let backend = match a.judge.backend {
        BackendKind::None => None,
        BackendKind::Fallback => Some(JudgeBackend::LexicalFallback(a.judge.threshold)),
        BackendKind::Replay => Some(JudgeBackend::Replay(completion_client(
            BackendKind::Replay,
            a.judge.cassette.as_deref(),
            "HAR_JUDGE",
        )?)),
        BackendKind::Remote => Some(JudgeBackend::Remote(completion_client(
            BackendKind::Remote,
            a.judge.cassette.as_deref(),
            "HAR_JUDGE",
        )?)),
    };
    if a.judge.backend == BackendKind::Fallback && !(0.0..=1.0).contains(&a.judge.threshold) {
        return Err(CliError::Usage(format!(
            "--threshold must lie in [0, 1], got {}",
            a.judge.threshold
        )));
    }
    let (corpus, preds) = load_inputs(&a.corpus, &a.predictions)?;
    let scorer = Scorer::new(cfg, backend.map(MemoryJudge::new))?;
    let records = scorer.score_predictions(&corpus, &preds)?;
    let mut inputs = digests(&[("corpus", &a.corpus), ("predictions", &a.predictions)])?;
    if let (BackendKind::Replay, Some(c)) = (a.judge.backend, &a.judge.cassette) {
        inputs.insert("cassette".into(), file_digest(c)?);
    }
    let mut judge = json!({ "backend": backend_name(a.judge.backend) });
    if a.judge.backend == BackendKind::Fallback {
        judge["threshold"] = json!(a.judge.threshold);
    }
    let header = FileHeader::new(
        "score",
        json!({
            "score": cfg,
            "judge": judge,
            "inputs": inputs,
        }),
    );
    emit_records(&a.out, &header, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Member {
    pub episode_id: String,
    pub step_index: usize,
    pub candidate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AdvantageRecord {
    pub group_id: String,
    pub members: Vec<Member>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

/// Groups rewards in order of first appearance and normalizes each group.
pub fn group_advantages(records: &[ScoreRecord], by: GroupBy) -> Result<Vec<AdvantageRecord>, CliError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&ScoreRecord>> = HashMap::new();
    for r in records {
        let id = match by {
            GroupBy::Step => format!("{}#{}", r.episode_id, r.step_index),
            GroupBy::Episode => r.episode_id.clone(),
        };
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let members = &groups[&id];
            let group = CandidateGroup::new(id.clone(), members.iter().map(|r| r.reward.total).collect());
            let adv = advantages(&group).map_err(data)?;
            Ok(AdvantageRecord {
                group_id: id,
                members: members
                    .iter()
                    .map(|r| Member {
                        episode_id: r.episode_id.clone(),
                        step_index: r.step_index,
                        candidate: r.candidate,
                    })
                    .collect(),
                rewards: group.rewards,
                advantages: adv.values,
                degenerate: adv.degenerate,
            })
        })
        .collect()
}

fn cmd_advantages(a: AdvantagesArgs) -> Result<(), CliError> {
    let records: Vec<ScoreRecord> = jsonl::read_records_from(&a.rewards)
        .map_err(|e| data(format!("{}: {e}", a.rewards.display())))?
        .into_iter()
        .map(|l| l.value)
        .collect();
    let out = group_advantages(&records, a.group_by)?;
    let header = FileHeader::new(
        "advantages",
        json!({
            "group_by": a.group_by,
            "inputs": digests(&[("rewards", &a.rewards)])?,
        }),
    );
    emit_records(&a.out, &header, &out)
}

fn cmd_mine(a: MineArgs) -> Result<(), CliError> {
    a.rule.validate()?;
    let (corpus, preds) = load_inputs(&a.corpus, &a.predictions)?;
    let cfg = MiningConfig {
        rule: StepRule::new(a.rule),
        output_kind: a.format_kind.into(),
        format: FormatPolicy::default(),
    };
    let outcome = mine_hard_samples(&corpus, &preds, &cfg)?;
    eprintln!(
        "mined {} hard samples; {} correct; {} unscored",
        outcome.hard.len(),
        outcome.correct.len(),
        outcome.unscored.len()
    );
    for k in &outcome.unscored {
        eprintln!("unscored: {k}");
    }
    let header = FileHeader::new(
        "mine",
        json!({
            "mining": cfg,
            "inputs": digests(&[("corpus", &a.corpus), ("predictions", &a.predictions)])?,
        }),
    );
    emit_records(&a.out, &header, &outcome.hard)
}

fn templates(dir: Option<&Path>) -> Result<TemplateSet, CliError> {
    Ok(match dir {
        Some(d) => TemplateSet::from_dir(d)?,
        None => TemplateSet::builtin().clone(),
    })
}

fn teacher_config(t: &TeacherArgs) -> Value {
    json!({
        "backend": backend_name(t.backend),
        "templates": if t.templates.is_some() { "custom" } else { "builtin" },
    })
}

fn cmd_reflect_build(a: ReflectArgs) -> Result<(), CliError> {
    let teacher = completion_client(a.teacher.backend, a.teacher.cassette.as_deref(), "HAR_TEACHER")?;
    let set = templates(a.teacher.templates.as_deref())?;
    let hard: Vec<HardSample> = jsonl::read_records_from(&a.hard)
        .map_err(|e| data(format!("{}: {e}", a.hard.display())))?
        .into_iter()
        .map(|l| l.value)
        .collect();
    let guides = hard
        .par_iter()
        .map(|h| Ok((h.key(), synthesize_guidelines(&set, h, teacher.as_ref())?)))
        .collect::<Result<BTreeMap<StepKey, _>, PipelineError>>()?;
    let samples = build_reflection_set(&set, &hard, &guides)?;
    let mut inputs = digests(&[("hard", &a.hard)])?;
    if let Some(c) = &a.teacher.cassette {
        if a.teacher.backend == BackendKind::Replay {
            inputs.insert("cassette".into(), file_digest(c)?);
        }
    }
    let header = FileHeader::new(
        "reflect-build",
        json!({ "teacher": teacher_config(&a.teacher), "inputs": inputs }),
    );
    emit_records(&a.out, &header, &samples)
}

#[derive(Debug, Serialize)]
struct SummaryRecord<'a> {
    episode_id: &'a str,
    step_index: usize,
    summary: String,
}

fn cmd_act2sum(a: Act2SumArgs) -> Result<(), CliError> {
    let teacher = completion_client(a.teacher.backend, a.teacher.cassette.as_deref(), "HAR_TEACHER")?;
    let set = templates(a.teacher.templates.as_deref())?;
    let corpus = load_corpus(&a.corpus).map_err(|e| data(format!("{}: {e}", a.corpus.display())))?;
    let steps: Vec<_> = corpus
        .iter()
        .flat_map(|e| e.steps.iter().map(move |s| (e, s)))
        .collect();
    let records = steps
        .par_iter()
        .map(|(e, s)| {
            Ok(SummaryRecord {
                episode_id: &e.episode_id,
                step_index: s.step_index,
                summary: synthesize_act2sum(&set, s, &e.goal, teacher.as_ref())?,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let header = FileHeader::new(
        "act2sum",
        json!({ "teacher": teacher_config(&a.teacher), "inputs": digests(&[("corpus", &a.corpus)])? }),
    );
    emit_records(&a.out, &header, &records)
}

#[derive(Debug, Serialize)]
struct BatchItem<'a> {
    task: crate::pipeline::TaskKind,
    index: usize,
    record: &'a Value,
}

#[derive(Debug, Serialize)]
struct BatchRecord<'a> {
    batch: usize,
    items: Vec<BatchItem<'a>>,
}

fn cmd_mix(a: MixArgs) -> Result<(), CliError> {
    // argument problems are usage errors even when the inputs are unreadable
    mix_tasks(&[()], &[()], a.ratio, a.batch_size, a.seed)?;
    let read = |p: &Path| -> Result<Vec<Value>, CliError> {
        let reader = jsonl::open(p)?;
        Ok(jsonl::read_values(reader)
            .map_err(|e| data(format!("{}: {e}", p.display())))?
            .into_iter()
            .map(|l| l.value)
            .collect())
    };
    let episodic = read(&a.episodic)?;
    let grounding = read(&a.grounding)?;
    let plan = mix_tasks(&episodic, &grounding, a.ratio, a.batch_size, a.seed)?;
    let records: Vec<BatchRecord<'_>> = plan
        .batches
        .iter()
        .zip(plan.materialize(&episodic, &grounding))
        .enumerate()
        .map(|(i, (refs, items))| BatchRecord {
            batch: i,
            items: refs
                .iter()
                .zip(items)
                .map(|(r, (task, record))| BatchItem {
                    task,
                    index: r.index,
                    record,
                })
                .collect(),
        })
        .collect();
    let header = FileHeader::new(
        "mix",
        json!({
            "ratio": a.ratio,
            "batch_size": a.batch_size,
            "seed": a.seed,
            "episodic_count": plan.episodic_count,
            "grounding_count": plan.grounding_count,
            "inputs": digests(&[("episodic", &a.episodic), ("grounding", &a.grounding)])?,
        }),
    );
    emit_records(&a.out, &header, &records)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    a.rule.validate()?;
    let rule = StepRule {
        click: a.rule,
        text: TextMatch::default(),
    };
    let mut inputs = Vec::new();
    let mut report = match (&a.corpus, &a.predictions) {
        (Some(c), Some(p)) => {
            inputs.push(("corpus", c.as_path()));
            inputs.push(("predictions", p.as_path()));
            let (corpus, preds) = load_inputs(c, p)?;
            episode_metrics(&corpus, &preds, &rule)?
        }
        (None, None) if a.grounding_queries.is_some() => episode_metrics(&[], &[], &rule)?,
        _ => {
            return Err(CliError::Usage(
                "eval needs --corpus with --predictions, or grounding inputs".into(),
            ))
        }
    };
    if let (Some(q), Some(p)) = (&a.grounding_queries, &a.grounding_predictions) {
        inputs.push(("grounding_queries", q.as_path()));
        inputs.push(("grounding_predictions", p.as_path()));
        let queries: Vec<GroundingQuery> = jsonl::read_records_from(q)
            .map_err(|e| data(format!("{}: {e}", q.display())))?
            .into_iter()
            .map(|l| l.value)
            .collect();
        for qq in &queries {
            qq.target_bbox
                .check_within(qq.resolution)
                .map_err(|e| data(format!("{}: query {}: {e}", q.display(), qq.query_id)))?;
        }
        let preds: Vec<GroundingPrediction> = jsonl::read_records_from(p)
            .map_err(|e| data(format!("{}: {e}", p.display())))?
            .into_iter()
            .map(|l| l.value)
            .collect();
        report.grounding = Some(grounding_metrics(&queries, &preds));
    }
    if report.missing_predictions > 0 {
        eprintln!(
            "{} steps had no prediction and count as failures",
            report.missing_predictions
        );
    }
    let header = FileHeader::new("eval", json!({ "rule": rule, "inputs": digests(&inputs)? }));
    let text = match a.format {
        ReportFormatArg::Json => {
            let body = json!({ "header": header, "report": report });
            let mut s = serde_json::to_string_pretty(&body).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormatArg::Table => format!(
            "{} {} rule={}\n\n{}",
            header.engine,
            header.command,
            a.rule,
            emit_report(&report, ReportFormat::Table)
        ),
    };
    emit(&a.out, &text)
}

/// `(pixel distance, normalized distance, reward)` samples along a ray from the target.
pub fn reward_curve(
    res: ScreenResolution,
    gold: Point,
    axis: Axis,
    max_distance: u32,
    step: u32,
    cfg: &RewardConfig,
) -> Vec<(f64, f64, f64)> {
    let step = step.max(1);
    let (dx, dy) = match axis {
        Axis::X => (1.0, 0.0),
        Axis::Y => (0.0, 1.0),
        Axis::Diagonal => (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    };
    let mut out = Vec::new();
    let mut d = 0u32;
    loop {
        let x = (f64::from(gold.x) + dx * f64::from(d)).round();
        let y = (f64::from(gold.y) + dy * f64::from(d)).round();
        if x > f64::from(res.width()) || y > f64::from(res.height()) {
            break;
        }
        let p = Point::new(x as u32, y as u32);
        out.push((
            euclid(p, gold),
            normalized_distance(p, gold, res),
            coord_action_reward(p, gold, res, cfg),
        ));
        match d.checked_add(step) {
            Some(n) if n <= max_distance => d = n,
            _ => break,
        }
    }
    out
}

fn cmd_plot(a: PlotArgs) -> Result<(), CliError> {
    let cfg = a.reward.resolve()?;
    let res = ScreenResolution::new(a.width, a.height).map_err(|e| CliError::Usage(e.to_string()))?;
    let gold = Point::new(a.gold_x.unwrap_or(a.width / 2), a.gold_y.unwrap_or(a.height / 2));
    if gold.x > a.width || gold.y > a.height {
        return Err(CliError::Usage(format!(
            "target {gold} lies outside {}x{}",
            a.width, a.height
        )));
    }
    let header = FileHeader::new(
        "plot",
        json!({
            "reward": cfg,
            "width": a.width,
            "height": a.height,
            "gold": [gold.x, gold.y],
            "axis": a.axis,
            "max_distance": a.max_distance,
            "step": a.step,
        }),
    );
    let framed = json!({ "header": header });
    let mut text = format!("# {framed}\n");
    text.push_str("distance,norm_distance,reward\n");
    for (d, n, r) in reward_curve(res, gold, a.axis, a.max_distance, a.step, &cfg) {
        text.push_str(&format!("{d},{n},{r}\n"));
    }
    emit(&a.out, &text)
}
