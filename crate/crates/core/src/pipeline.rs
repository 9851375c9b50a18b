//! Learning-from-failure data flow: hard-sample mining, guideline synthesis,
//! reflection prompts, action summaries and grounding/episodic task mixing.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{parse_action, Action};
use crate::client::{ClientError, TextCompletion};
use crate::episode::{history_text, Episode, EpisodeStep, PredictionRecord};
use crate::metrics::{step_success, MetricsError, StepRule};
use crate::prompt::{
    check_format_with, extract_tags, parse_guidelines, FormatPolicy, GuidelineError, GuidelineSet, PromptError,
    PromptKind, Slots, Tag, TemplateSet, SLOT_ACTION, SLOT_ERROR_ANSWER, SLOT_ERROR_THINK, SLOT_GOAL,
    SLOT_GROUND_TRUTH, SLOT_GUIDELINES, SLOT_HISTORY,
};

pub const DEFAULT_GROUNDING_RATIO: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("prediction for {episode_id} step {step_index} does not match any corpus step")]
    UnresolvedPrediction { episode_id: String, step_index: usize },
    #[error("more than one prediction for {episode_id} step {step_index}")]
    DuplicatePrediction { episode_id: String, step_index: usize },
    #[error("teacher unreachable: {0}")]
    TeacherUnreachable(ClientError),
    #[error("no cassette entry for teacher request {key}")]
    CassetteMiss { key: String },
    #[error(transparent)]
    Guidelines(#[from] GuidelineError),
    #[error("teacher response has no <summary> tag")]
    NoSummaryTag,
    #[error("no guidelines for {0}")]
    MissingGuidelines(StepKey),
    #[error("both task lists must be non-empty")]
    EmptyTaskList,
    #[error("grounding ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("batch size must be at least 2, got {0}")]
    InvalidBatchSize(usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<ClientError> for PipelineError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::CassetteMiss { key } => PipelineError::CassetteMiss { key },
            other => PipelineError::TeacherUnreachable(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepKey {
    pub episode_id: String,
    pub step_index: usize,
}

impl StepKey {
    pub fn new(episode_id: impl Into<String>, step_index: usize) -> Self {
        StepKey {
            episode_id: episode_id.into(),
            step_index,
        }
    }
}

impl std::fmt::Display for StepKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} step {}", self.episode_id, self.step_index)
    }
}

/// The action a failed prediction committed to, or its raw text when it did not parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorAction {
    Parsed(Action),
    Unparseable(String),
}

impl ErrorAction {
    pub fn answer_text(&self) -> String {
        match self {
            ErrorAction::Parsed(a) => a.to_string(),
            ErrorAction::Unparseable(raw) => raw.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardSample {
    pub episode_id: String,
    pub step_index: usize,
    pub image_ref: String,
    pub goal: String,
    pub history: String,
    pub gold_action: Action,
    pub error_action: ErrorAction,
    pub error_think: String,
}

impl HardSample {
    pub fn key(&self) -> StepKey {
        StepKey::new(&self.episode_id, self.step_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionSample {
    #[serde(flatten)]
    pub sample: HardSample,
    pub guidelines: GuidelineSet,
    pub rendered_prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub rule: StepRule,
    /// Prompt format the predictions were produced under.
    pub output_kind: PromptKind,
    pub format: FormatPolicy,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            rule: StepRule::default(),
            output_kind: PromptKind::InferenceS2,
            format: FormatPolicy::default(),
        }
    }
}

/// Every corpus step lands in exactly one of the three lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningOutcome {
    pub hard: Vec<HardSample>,
    pub correct: Vec<StepKey>,
    /// Steps with no prediction; reported, never mined.
    pub unscored: Vec<StepKey>,
}

fn classify(
    episode: &Episode,
    step: &EpisodeStep,
    raw: &str,
    cfg: &MiningConfig,
) -> Result<Option<HardSample>, PipelineError> {
    let tags = extract_tags(raw);
    let answer = tags.get(Tag::Answer);
    let parsed = answer.map_or_else(|| parse_action(raw.trim()), parse_action);
    let format_ok = check_format_with(&tags, cfg.output_kind, cfg.format).unwrap_or(1) == 1;
    let passed = match &parsed {
        Ok(a) if format_ok => step_success(a, step, &cfg.rule)?,
        _ => false,
    };
    if passed {
        return Ok(None);
    }
    let error_action = match parsed {
        Ok(a) => ErrorAction::Parsed(a),
        Err(_) => ErrorAction::Unparseable(answer.unwrap_or(raw).to_string()),
    };
    Ok(Some(HardSample {
        episode_id: episode.episode_id.clone(),
        step_index: step.step_index,
        image_ref: step.image_ref.clone(),
        goal: episode.goal.clone(),
        history: history_text(episode, step.step_index).expect("step belongs to episode"),
        gold_action: step.gold_action.clone(),
        error_action,
        error_think: tags.get(Tag::Think).unwrap_or_default().to_string(),
    }))
}

/// Flags steps whose prediction fails the format check or the step rule.
pub fn mine_hard_samples(
    corpus: &[Episode],
    predictions: &[PredictionRecord],
    cfg: &MiningConfig,
) -> Result<MiningOutcome, PipelineError> {
    let mut by_step: HashMap<(&str, usize), &str> = HashMap::new();
    let known: HashSet<(&str, usize)> = corpus
        .iter()
        .flat_map(|e| e.steps.iter().map(move |s| (e.episode_id.as_str(), s.step_index)))
        .collect();
    for p in predictions {
        let key = (p.episode_id.as_str(), p.step_index);
        if !known.contains(&key) {
            return Err(PipelineError::UnresolvedPrediction {
                episode_id: p.episode_id.clone(),
                step_index: p.step_index,
            });
        }
        match by_step.entry(key) {
            Entry::Occupied(_) => {
                return Err(PipelineError::DuplicatePrediction {
                    episode_id: p.episode_id.clone(),
                    step_index: p.step_index,
                })
            }
            Entry::Vacant(v) => {
                v.insert(&p.raw_output);
            }
        }
    }
    let mut out = MiningOutcome::default();
    for e in corpus {
        for s in &e.steps {
            let key = StepKey::new(&e.episode_id, s.step_index);
            match by_step.get(&(e.episode_id.as_str(), s.step_index)) {
                None => out.unscored.push(key),
                Some(raw) => match classify(e, s, raw, cfg)? {
                    Some(h) => out.hard.push(h),
                    None => out.correct.push(key),
                },
            }
        }
    }
    Ok(out)
}

fn error_slots(h: &HardSample) -> Slots {
    Slots::new()
        .with(SLOT_GOAL, &h.goal)
        .with(SLOT_HISTORY, &h.history)
        .with(SLOT_ERROR_THINK, &h.error_think)
        .with(SLOT_ERROR_ANSWER, h.error_action.answer_text())
}

pub fn guidance_prompt(templates: &TemplateSet, h: &HardSample) -> Result<String, PromptError> {
    templates.render(
        PromptKind::GuidanceSynthesis,
        &error_slots(h).with(SLOT_GROUND_TRUTH, h.gold_action.to_string()),
    )
}

/// Asks the teacher for correction guidelines (at most three are kept).
pub fn synthesize_guidelines(
    templates: &TemplateSet,
    h: &HardSample,
    teacher: &dyn TextCompletion,
) -> Result<GuidelineSet, PipelineError> {
    let response = teacher.complete(&guidance_prompt(templates, h)?)?;
    Ok(parse_guidelines(&response)?)
}

pub fn reflection_prompt(
    templates: &TemplateSet,
    h: &HardSample,
    guidelines: &GuidelineSet,
) -> Result<String, PromptError> {
    templates.render(
        PromptKind::Reflection,
        &error_slots(h).with(SLOT_GUIDELINES, guidelines.to_string()),
    )
}

/// Reflection prompts ordered by `(episode_id, step_index)`.
pub fn build_reflection_set(
    templates: &TemplateSet,
    hard: &[HardSample],
    guides: &BTreeMap<StepKey, GuidelineSet>,
) -> Result<Vec<ReflectionSample>, PipelineError> {
    let mut sorted: Vec<&HardSample> = hard.iter().collect();
    sorted.sort_by_key(|h| h.key());
    sorted
        .into_iter()
        .map(|h| {
            let g = guides
                .get(&h.key())
                .ok_or_else(|| PipelineError::MissingGuidelines(h.key()))?;
            Ok(ReflectionSample {
                sample: h.clone(),
                guidelines: g.clone(),
                rendered_prompt: reflection_prompt(templates, h, g)?,
            })
        })
        .collect()
}

pub fn act2sum_prompt(templates: &TemplateSet, step: &EpisodeStep, goal: &str) -> Result<String, PromptError> {
    templates.render(
        PromptKind::Act2Sum,
        &Slots::new()
            .with(SLOT_GOAL, goal)
            .with(SLOT_ACTION, step.gold_action.to_string()),
    )
}

/// One-sentence summary of the step's gold action, from the `<summary>` tag.
pub fn synthesize_act2sum(
    templates: &TemplateSet,
    step: &EpisodeStep,
    goal: &str,
    teacher: &dyn TextCompletion,
) -> Result<String, PipelineError> {
    let response = teacher.complete(&act2sum_prompt(templates, step, goal)?)?;
    match extract_tags(&response).get(Tag::Summary) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err(PipelineError::NoSummaryTag),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Episodic,
    Grounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskRef {
    pub task: TaskKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub episodic_count: usize,
    pub grounding_count: usize,
    /// Target share of grounding items per batch.
    pub ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub batches: Vec<Vec<TaskRef>>,
}

impl MixPlan {
    pub fn materialize<'a, T>(&self, episodic: &'a [T], grounding: &'a [T]) -> Vec<Vec<(TaskKind, &'a T)>> {
        self.batches
            .iter()
            .map(|b| {
                b.iter()
                    .map(|r| {
                        let item = match r.task {
                            TaskKind::Episodic => &episodic[r.index],
                            TaskKind::Grounding => &grounding[r.index],
                        };
                        (r.task, item)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Interleaves both task lists into shuffled batches.
///
/// Each batch holds `round(ratio * size)` grounding items while both lists have
/// items left; once one runs out the other fills the remaining batches.
pub fn mix_tasks<E, G>(
    episodic: &[E],
    grounding: &[G],
    ratio: f64,
    batch_size: usize,
    seed: u64,
) -> Result<MixPlan, PipelineError> {
    if episodic.is_empty() || grounding.is_empty() {
        return Err(PipelineError::EmptyTaskList);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PipelineError::InvalidRatio(ratio));
    }
    if batch_size < 2 {
        return Err(PipelineError::InvalidBatchSize(batch_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e: Vec<usize> = (0..episodic.len()).collect();
    let mut g: Vec<usize> = (0..grounding.len()).collect();
    e.shuffle(&mut rng);
    g.shuffle(&mut rng);
    let (mut ei, mut gi) = (0, 0);
    let mut batches = Vec::new();
    while ei < e.len() || gi < g.len() {
        let (e_left, g_left) = (e.len() - ei, g.len() - gi);
        let size = batch_size.min(e_left + g_left);
        let want_g = (ratio * size as f64).round() as usize;
        let mut take_g = want_g.min(g_left);
        let take_e = (size - take_g).min(e_left);
        take_g = size - take_e;
        let mut batch: Vec<TaskRef> = e[ei..ei + take_e]
            .iter()
            .map(|&index| TaskRef {
                task: TaskKind::Episodic,
                index,
            })
            .chain(g[gi..gi + take_g].iter().map(|&index| TaskRef {
                task: TaskKind::Grounding,
                index,
            }))
            .collect();
        batch.shuffle(&mut rng);
        ei += take_e;
        gi += take_g;
        batches.push(batch);
    }
    Ok(MixPlan {
        episodic_count: episodic.len(),
        grounding_count: grounding.len(),
        ratio,
        batch_size,
        seed,
        batches,
    })
}
