//! End-to-end scoring of model outputs with the hybrid reward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{parse_action_with, Action, MalformedAction, ParseOptions};
use crate::episode::CorpusIndex;
use crate::episode::{history_text, Episode, PredictionRecord};
use crate::geom::ScreenResolution;
use crate::judge::{JudgeError, MemoryJudge};
use crate::prompt::{check_format_with, extract_tags, FormatPolicy, PromptKind, Tag, UnsupportedKind};
use crate::reward::{action_reward, hybrid_reward, RewardBreakdown, RewardConfig, RewardError};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("prediction for {episode_id} step {step_index} does not match any corpus step")]
    UnresolvedPrediction { episode_id: String, step_index: usize },
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Unsupported(#[from] UnsupportedKind),
    #[error(transparent)]
    Config(#[from] RewardError),
    #[error("gold action {index}: {source}")]
    MalformedGold { index: usize, source: MalformedAction },
    #[error("input lists differ in length: {0}")]
    LengthMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub reward: RewardConfig,
    pub output_kind: PromptKind,
    pub format: FormatPolicy,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            reward: RewardConfig::default(),
            output_kind: PromptKind::InferenceS2,
            format: FormatPolicy::default(),
        }
    }
}

/// One reward line in a rewards file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub episode_id: String,
    pub step_index: usize,
    #[serde(default)]
    pub candidate: u32,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

/// Scores raw outputs. Without a judge the memory term is always 0.
pub struct Scorer {
    cfg: ScoreConfig,
    judge: Option<MemoryJudge>,
}

impl Scorer {
    pub fn new(cfg: ScoreConfig, judge: Option<MemoryJudge>) -> Result<Self, ScoreError> {
        cfg.reward.validate()?;
        // reject kinds without a format rule up front
        check_format_with(&extract_tags(""), cfg.output_kind, cfg.format)?;
        Ok(Scorer { cfg, judge })
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.cfg
    }

    /// Format-failing outputs score 0 and skip the judge.
    pub fn score_output(
        &self,
        raw: &str,
        gold: &Action,
        res: ScreenResolution,
        history: &str,
    ) -> Result<RewardBreakdown, ScoreError> {
        let tags = extract_tags(raw);
        let format = check_format_with(&tags, self.cfg.output_kind, self.cfg.format)?;
        let opts = ParseOptions {
            case_insensitive_keywords: self.cfg.format.case_insensitive_keywords,
        };
        let action = match tags.get(Tag::Answer).map(|a| parse_action_with(a, opts)) {
            Some(Ok(pred)) => action_reward(&pred, gold, res, &self.cfg.reward),
            _ => 0.0,
        };
        let memory = match (&self.judge, format) {
            (Some(judge), 1) => judge.judge(tags.get(Tag::Think).unwrap_or_default(), history)?.reward(),
            _ => 0,
        };
        Ok(hybrid_reward(format, action, memory, &self.cfg.reward))
    }

    /// One record per prediction, in input order.
    pub fn score_predictions(
        &self,
        corpus: &[Episode],
        predictions: &[PredictionRecord],
    ) -> Result<Vec<ScoreRecord>, ScoreError> {
        let index = CorpusIndex::new(corpus);
        predictions
            .par_iter()
            .map(|p| {
                let (episode, step) =
                    index
                        .resolve(&p.episode_id, p.step_index)
                        .ok_or_else(|| ScoreError::UnresolvedPrediction {
                            episode_id: p.episode_id.clone(),
                            step_index: p.step_index,
                        })?;
                let history = history_text(episode, p.step_index).expect("resolved step");
                let reward = self.score_output(&p.raw_output, &step.gold_action, step.resolution, &history)?;
                Ok(ScoreRecord {
                    episode_id: p.episode_id.clone(),
                    step_index: p.step_index,
                    candidate: p.candidate,
                    reward,
                })
            })
            .collect()
    }

    /// Element-wise scoring over parallel lists; golds are canonical action strings.
    pub fn score_batch(
        &self,
        raw_outputs: &[String],
        golds: &[String],
        resolutions: &[ScreenResolution],
        histories: &[String],
    ) -> Result<Vec<RewardBreakdown>, ScoreError> {
        let n = raw_outputs.len();
        if golds.len() != n || resolutions.len() != n || histories.len() != n {
            return Err(ScoreError::LengthMismatch(format!(
                "raw_outputs {n}, golds {}, resolutions {}, histories {}",
                golds.len(),
                resolutions.len(),
                histories.len()
            )));
        }
        (0..n)
            .map(|i| {
                let gold = golds[i]
                    .parse::<Action>()
                    .map_err(|source| ScoreError::MalformedGold { index: i, source })?;
                self.score_output(&raw_outputs[i], &gold, resolutions[i], &histories[i])
            })
            .collect()
    }
}
