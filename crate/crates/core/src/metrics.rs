//! Benchmark-style evaluation: step and episode success, element accuracy,
//! operation F1 and grounding accuracy.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{parse_action, Action};
use crate::episode::{Episode, EpisodeStep, PredictionRecord};
use crate::geom::{BBox, Point, ScreenResolution};
use crate::prompt::{extract_tags, Tag};
use crate::reward::{normalized_distance, TextMatch};

pub const DEFAULT_CLICK_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("click rule `in-bbox` needs a gold bounding box")]
    RuleRequiresBBox,
    #[error("step has no gold bounding box")]
    MissingBBox,
    #[error("prediction carries no coordinate")]
    NonCoordinateAction,
    #[error("distance threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("unknown click rule `{0}` (expected in-bbox, norm:<t> or bbox-else-norm:<t>)")]
    UnknownRule(String),
}

/// How a coordinate prediction is judged correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClickRule {
    #[serde(rename = "in-bbox")]
    InBBox,
    #[serde(rename = "norm")]
    NormDistance { threshold: f64 },
    #[serde(rename = "bbox-else-norm")]
    BBoxElseNormDistance { threshold: f64 },
}

impl Default for ClickRule {
    fn default() -> Self {
        ClickRule::BBoxElseNormDistance {
            threshold: DEFAULT_CLICK_THRESHOLD,
        }
    }
}

fn checked_threshold(t: f64) -> Result<f64, MetricsError> {
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(MetricsError::InvalidThreshold(t))
    }
}

impl ClickRule {
    pub fn validate(&self) -> Result<(), MetricsError> {
        match *self {
            ClickRule::InBBox => Ok(()),
            ClickRule::NormDistance { threshold } | ClickRule::BBoxElseNormDistance { threshold } => {
                checked_threshold(threshold).map(|_| ())
            }
        }
    }
}

impl FromStr for ClickRule {
    type Err = MetricsError;

    /// `in-bbox`, `norm[:t]` or `bbox-else-norm[:t]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let threshold = match arg {
            Some(a) => checked_threshold(a.trim().parse().map_err(|_| MetricsError::UnknownRule(s.to_string()))?)?,
            None => DEFAULT_CLICK_THRESHOLD,
        };
        match (name.trim(), arg) {
            ("in-bbox", None) => Ok(ClickRule::InBBox),
            ("norm", _) => Ok(ClickRule::NormDistance { threshold }),
            ("bbox-else-norm", _) => Ok(ClickRule::BBoxElseNormDistance { threshold }),
            _ => Err(MetricsError::UnknownRule(s.to_string())),
        }
    }
}

impl fmt::Display for ClickRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClickRule::InBBox => f.write_str("in-bbox"),
            ClickRule::NormDistance { threshold } => write!(f, "norm:{threshold}"),
            ClickRule::BBoxElseNormDistance { threshold } => write!(f, "bbox-else-norm:{threshold}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub click: ClickRule,
    pub text: TextMatch,
}

impl StepRule {
    pub fn new(click: ClickRule) -> Self {
        StepRule {
            click,
            text: TextMatch::default(),
        }
    }
}

fn click_hit(pred: Point, gold: Point, bbox: Option<BBox>, res: ScreenResolution, rule: ClickRule) -> bool {
    match (rule, bbox) {
        (ClickRule::InBBox, Some(b)) | (ClickRule::BBoxElseNormDistance { .. }, Some(b)) => b.contains(pred),
        (ClickRule::NormDistance { threshold }, _) | (ClickRule::BBoxElseNormDistance { threshold }, None) => {
            normalized_distance(pred, gold, res) <= threshold
        }
        (ClickRule::InBBox, None) => false,
    }
}

pub fn step_success(pred: &Action, step: &EpisodeStep, rule: &StepRule) -> Result<bool, MetricsError> {
    let gold = &step.gold_action;
    if rule.click == ClickRule::InBBox && gold.point().is_some() && step.gold_bbox.is_none() {
        return Err(MetricsError::RuleRequiresBBox);
    }
    if pred.tag() != gold.tag() {
        return Ok(false);
    }
    if let (Some(a), Some(b)) = (pred.text(), gold.text()) {
        if !rule.text.matches(a, b) {
            return Ok(false);
        }
    }
    if let (Action::Scroll(a), Action::Scroll(b)) = (pred, gold) {
        return Ok(a == b);
    }
    Ok(match (pred.point(), gold.point()) {
        (Some(p), Some(g)) => click_hit(p, g, step.gold_bbox, step.resolution, rule.click),
        _ => true,
    })
}

pub fn element_accuracy(pred: &Action, step: &EpisodeStep) -> Result<bool, MetricsError> {
    let bbox = step.gold_bbox.ok_or(MetricsError::MissingBBox)?;
    let p = pred.point().ok_or(MetricsError::NonCoordinateAction)?;
    Ok(bbox.contains(p))
}

fn payload_tokens(a: &Action) -> Vec<String> {
    let payload = match a {
        Action::Scroll(d) => d.as_str(),
        other => other.text().unwrap_or(""),
    };
    payload.to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Token F1 of the text payloads; 0 when the operations differ. Coordinates are ignored.
pub fn operation_f1(pred: &Action, gold: &Action) -> f64 {
    if pred.tag() != gold.tag() {
        return 0.0;
    }
    let p = payload_tokens(pred);
    let g = payload_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn grounding_hit(pred: Point, target: BBox) -> bool {
    target.contains(pred)
}

/// The action a model output commits to: the `<answer>` content if tagged, else the whole text.
pub fn predicted_action(raw: &str) -> Option<Action> {
    let tags = extract_tags(raw);
    match tags.get(Tag::Answer) {
        Some(answer) => parse_action(answer).ok(),
        None => parse_action(raw.trim()).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub episode_id: String,
    pub step_index: usize,
    pub predicted: bool,
    pub parsed: bool,
    pub success: bool,
    /// Present for steps whose gold action is coordinate-bearing and boxed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_hit: Option<bool>,
    pub operation_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub episodes: usize,
    pub steps: usize,
    pub correct_steps: usize,
    pub successful_episodes: usize,
    pub element_steps: usize,
    pub element_hits: usize,
    pub ssr: f64,
    /// Mean of the per-episode step success rates; never below `sr`.
    pub episode_ssr: f64,
    pub sr: f64,
    pub element_accuracy: f64,
    pub operation_f1: f64,
}

impl SplitMetrics {
    fn from_outcomes<'a>(episodes: impl IntoIterator<Item = &'a [StepOutcome]>) -> Self {
        let mut m = SplitMetrics::default();
        let mut f1_sum = 0.0;
        let mut episode_ssr_sum = 0.0;
        for steps in episodes {
            m.episodes += 1;
            episode_ssr_sum += ratio(steps.iter().filter(|s| s.success).count(), steps.len());
            if steps.iter().all(|s| s.success) {
                m.successful_episodes += 1;
            }
            for s in steps {
                m.steps += 1;
                m.correct_steps += usize::from(s.success);
                f1_sum += s.operation_f1;
                if let Some(hit) = s.element_hit {
                    m.element_steps += 1;
                    m.element_hits += usize::from(hit);
                }
            }
        }
        m.ssr = ratio(m.correct_steps, m.steps);
        m.sr = ratio(m.successful_episodes, m.episodes);
        m.episode_ssr = if m.episodes == 0 {
            0.0
        } else {
            episode_ssr_sum / m.episodes as f64
        };
        m.element_accuracy = ratio(m.element_hits, m.element_steps);
        m.operation_f1 = if m.steps == 0 { 0.0 } else { f1_sum / m.steps as f64 };
        m
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingMetrics {
    pub queries: usize,
    pub hits: usize,
    pub unparsed: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rule: StepRule,
    /// True when the corpus had no steps; every fraction is then 0.
    pub empty: bool,
    pub overall: SplitMetrics,
    pub categories: BTreeMap<String, SplitMetrics>,
    pub missing_predictions: usize,
    pub unmatched_predictions: usize,
    pub duplicate_predictions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingMetrics>,
    pub steps: Vec<StepOutcome>,
}

pub const UNTAGGED: &str = "untagged";

fn outcome(ep: &Episode, step: &EpisodeStep, raw: Option<&str>, rule: &StepRule) -> Result<StepOutcome, MetricsError> {
    let gold = &step.gold_action;
    let boxed = gold.point().is_some() && step.gold_bbox.is_some();
    let pred = raw.and_then(predicted_action);
    let (success, element_hit, f1) = match &pred {
        Some(a) => (
            step_success(a, step, rule)?,
            boxed.then(|| element_accuracy(a, step).unwrap_or(false)),
            operation_f1(a, gold),
        ),
        None => {
            if rule.click == ClickRule::InBBox && gold.point().is_some() && step.gold_bbox.is_none() {
                return Err(MetricsError::RuleRequiresBBox);
            }
            (false, boxed.then_some(false), 0.0)
        }
    };
    Ok(StepOutcome {
        episode_id: ep.episode_id.clone(),
        step_index: step.step_index,
        predicted: raw.is_some(),
        parsed: pred.is_some(),
        success,
        element_hit,
        operation_f1: f1,
    })
}

/// Scores one prediction (candidate 0) per step. Steps without a prediction fail.
pub fn episode_metrics(
    corpus: &[Episode],
    predictions: &[PredictionRecord],
    rule: &StepRule,
) -> Result<MetricsReport, MetricsError> {
    rule.click.validate()?;
    let known: HashSet<(&str, usize)> = corpus
        .iter()
        .flat_map(|e| e.steps.iter().map(move |s| (e.episode_id.as_str(), s.step_index)))
        .collect();
    let mut by_step: HashMap<(&str, usize), &str> = HashMap::new();
    let mut unmatched = 0;
    let mut duplicates = 0;
    for p in predictions.iter().filter(|p| p.candidate == 0) {
        let key = (p.episode_id.as_str(), p.step_index);
        if !known.contains(&key) {
            unmatched += 1;
            continue;
        }
        match by_step.entry(key) {
            Entry::Occupied(_) => duplicates += 1,
            Entry::Vacant(v) => {
                v.insert(p.raw_output.as_str());
            }
        }
    }

    let flat: Vec<(&Episode, &EpisodeStep)> = corpus
        .iter()
        .flat_map(|e| e.steps.iter().map(move |s| (e, s)))
        .collect();
    let steps: Vec<StepOutcome> = flat
        .par_iter()
        .map(|(e, s)| outcome(e, s, by_step.get(&(e.episode_id.as_str(), s.step_index)).copied(), rule))
        .collect::<Result<_, _>>()?;

    let missing = steps.iter().filter(|s| !s.predicted).count();
    let mut report = MetricsReport {
        rule: *rule,
        empty: steps.is_empty(),
        overall: SplitMetrics::default(),
        categories: BTreeMap::new(),
        missing_predictions: missing,
        unmatched_predictions: unmatched,
        duplicate_predictions: duplicates,
        grounding: None,
        steps,
    };
    let tags: Vec<String> = corpus
        .iter()
        .map(|e| e.tag.clone().unwrap_or_else(|| UNTAGGED.to_string()))
        .collect();
    report.recompute(&tags);
    Ok(report)
}

impl MetricsReport {
    fn episode_slices(&self) -> Vec<&[StepOutcome]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.steps.len() {
            if i == self.steps.len() || self.steps[i].episode_id != self.steps[start].episode_id {
                out.push(&self.steps[start..i]);
                start = i;
            }
        }
        out
    }

    fn recompute(&mut self, tags: &[String]) {
        let slices = self.episode_slices();
        let overall = SplitMetrics::from_outcomes(slices.iter().copied());
        let mut grouped: BTreeMap<&str, Vec<&[StepOutcome]>> = BTreeMap::new();
        for (tag, s) in tags.iter().zip(&slices) {
            grouped.entry(tag).or_default().push(s);
        }
        let categories = grouped
            .into_iter()
            .map(|(k, v)| (k.to_string(), SplitMetrics::from_outcomes(v)))
            .collect();
        self.overall = overall;
        self.categories = categories;
    }

    /// Overall metrics recomputed from the per-step outcomes alone.
    pub fn recomputed_overall(&self) -> SplitMetrics {
        SplitMetrics::from_outcomes(self.episode_slices())
    }
}

/// A description-to-point query against a target element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub query_id: String,
    pub description: String,
    #[serde(flatten)]
    pub resolution: ScreenResolution,
    pub target_bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingPrediction {
    pub query_id: String,
    pub raw_output: String,
}

fn point_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#""point_2d"\s*:\s*\[\s*(\d+(?:\.\d+)?)\s*,\s*(\d+(?:\.\d+)?)\s*\]"#).expect("valid regex")
    })
}

/// Reads `{"point_2d": [x, y], ...}` (fractional values are rounded), or a click action.
pub fn parse_grounding_point(raw: &str) -> Option<Point> {
    if let Some(c) = point_re().captures(raw) {
        let x: f64 = c[1].parse().ok()?;
        let y: f64 = c[2].parse().ok()?;
        if x.round() > f64::from(u32::MAX) || y.round() > f64::from(u32::MAX) {
            return None;
        }
        return Some(Point::new(x.round() as u32, y.round() as u32));
    }
    predicted_action(raw).and_then(|a| a.point())
}

/// Queries without a prediction, or with an unreadable point, count as misses.
pub fn grounding_metrics(queries: &[GroundingQuery], preds: &[GroundingPrediction]) -> GroundingMetrics {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in preds.iter().rev() {
        by_id.insert(&p.query_id, &p.raw_output);
    }
    let mut m = GroundingMetrics {
        queries: queries.len(),
        ..Default::default()
    };
    for q in queries {
        match by_id.get(q.query_id.as_str()).and_then(|r| parse_grounding_point(r)) {
            Some(p) => m.hits += usize::from(grounding_hit(p, q.target_bbox)),
            None => m.unparsed += 1,
        }
    }
    m.accuracy = ratio(m.hits, m.queries);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Table,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// A fraction as a one-decimal percentage, e.g. `0.702` as `70.2`.
pub fn percent(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn table_row(name: &str, m: &SplitMetrics) -> String {
    format!(
        "| {name} | {} | {} | {} | {} | {} | {} |",
        m.episodes,
        m.steps,
        percent(m.ssr),
        percent(m.sr),
        percent(m.element_accuracy),
        percent(m.operation_f1)
    )
}

pub fn emit_report(r: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => {
            let mut lines = vec![
                "| Split | Episodes | Steps | SSR | SR | Acc. | F1 |".to_string(),
                "|---|---|---|---|---|---|---|".to_string(),
            ];
            lines.extend(r.categories.iter().map(|(k, m)| table_row(k, m)));
            lines.push(table_row("Overall", &r.overall));
            if r.empty {
                lines.push("(empty corpus: no steps were scored)".to_string());
            }
            if r.missing_predictions > 0 {
                lines.push(format!("missing predictions: {}", r.missing_predictions));
            }
            if let Some(g) = &r.grounding {
                lines.push(format!(
                    "grounding accuracy: {} ({}/{})",
                    percent(g.accuracy),
                    g.hits,
                    g.queries
                ));
            }
            lines.push(String::new());
            lines.join("\n")
        }
    }
}
