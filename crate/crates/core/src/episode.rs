//! Episode chains, prediction records and their line-delimited file formats.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::action::{parse_action, Action};
use crate::geom::{BBox, ScreenResolution};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub step_index: usize,
    pub image_ref: String,
    pub resolution: ScreenResolution,
    pub gold_action: Action,
    pub gold_bbox: Option<BBox>,
    /// One-line summary of this step's action, used as history for later steps.
    pub history_summary: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub goal: String,
    /// Free-form category used for per-split metric breakdowns.
    pub tag: Option<String>,
    pub steps: Vec<EpisodeStep>,
}

/// One model emission for one step. `candidate` distinguishes rollouts of a group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub episode_id: String,
    pub step_index: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub candidate: u32,
    pub raw_output: String,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate episode id `{episode_id}`")]
    DuplicateEpisodeId { line: usize, episode_id: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EpisodeError {
    #[error("step {index} out of range for episode with {len} steps")]
    IndexOutOfRange { index: usize, len: usize },
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> Result<&EpisodeStep, EpisodeError> {
        self.steps.get(t).ok_or(EpisodeError::IndexOutOfRange {
            index: t,
            len: self.steps.len(),
        })
    }
}

/// Numbered history of the steps before `t`: `"1. ...\n2. ..."`, empty at `t = 0`.
pub fn history_text(e: &Episode, t: usize) -> Result<String, EpisodeError> {
    e.step(t)?;
    let lines: Vec<String> = e.steps[..t]
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.history_summary))
        .collect();
    Ok(lines.join("\n"))
}

struct Fields<'a> {
    line: usize,
    prefix: String,
    obj: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn err(&self, field: &str, message: impl Into<String>) -> CorpusError {
        CorpusError::Schema {
            line: self.line,
            field: format!("{}{}", self.prefix, field),
            message: message.into(),
        }
    }

    fn get(&self, field: &str) -> Result<&'a Value, CorpusError> {
        self.obj.get(field).ok_or_else(|| self.err(field, "missing"))
    }

    fn str(&self, field: &str) -> Result<&'a str, CorpusError> {
        self.get(field)?
            .as_str()
            .ok_or_else(|| self.err(field, "expected a string"))
    }

    fn u32(&self, field: &str) -> Result<u32, CorpusError> {
        self.get(field)?
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| self.err(field, "expected a non-negative 32-bit integer"))
    }
}

fn parse_step(line: usize, i: usize, v: &Value) -> Result<EpisodeStep, CorpusError> {
    let prefix = format!("steps[{i}].");
    let Some(obj) = v.as_object() else {
        return Err(CorpusError::Schema {
            line,
            field: format!("steps[{i}]"),
            message: "expected an object".into(),
        });
    };
    let f = Fields { line, prefix, obj };
    let step_index = f.u32("step_index")? as usize;
    let image_ref = f.str("image_ref")?.to_string();
    let resolution =
        ScreenResolution::new(f.u32("width")?, f.u32("height")?).map_err(|e| f.err("width", e.to_string()))?;
    let gold_action = parse_action(f.str("gold_action")?).map_err(|e| f.err("gold_action", e.to_string()))?;
    let gold_bbox = match obj.get("gold_bbox") {
        None | Some(Value::Null) => None,
        Some(b) => {
            let bbox: BBox = serde_json::from_value(b.clone()).map_err(|e| f.err("gold_bbox", e.to_string()))?;
            bbox.check_within(resolution)
                .map_err(|e| f.err("gold_bbox", e.to_string()))?;
            Some(bbox)
        }
    };
    let history_summary = f.str("history_summary")?.to_string();
    Ok(EpisodeStep {
        step_index,
        image_ref,
        resolution,
        gold_action,
        gold_bbox,
        history_summary,
    })
}

fn parse_episode(line: usize, v: &Value) -> Result<Episode, CorpusError> {
    let Some(obj) = v.as_object() else {
        return Err(CorpusError::Schema {
            line,
            field: "<record>".into(),
            message: "expected an object".into(),
        });
    };
    let f = Fields {
        line,
        prefix: String::new(),
        obj,
    };
    let episode_id = f.str("episode_id")?.to_string();
    let goal = f.str("goal")?.to_string();
    let tag = match obj.get("tag") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(f.err("tag", "expected a string")),
    };
    let raw_steps = f
        .get("steps")?
        .as_array()
        .ok_or_else(|| f.err("steps", "expected an array"))?;
    if raw_steps.is_empty() {
        return Err(f.err("steps", "episode has no steps"));
    }
    let mut steps = raw_steps
        .iter()
        .enumerate()
        .map(|(i, s)| parse_step(line, i, s))
        .collect::<Result<Vec<_>, _>>()?;
    steps.sort_by_key(|s| s.step_index);
    for (expected, s) in steps.iter().enumerate() {
        if s.step_index != expected {
            return Err(f.err(
                "steps",
                format!("step indices must be 0..{} without gaps or repeats", steps.len()),
            ));
        }
    }
    Ok(Episode {
        episode_id,
        goal,
        tag,
        steps,
    })
}

/// Parses and validates a corpus, failing on the first bad line.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Episode>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for l in jsonl::read_values(reader)? {
        let e = parse_episode(l.line, &l.value)?;
        if !seen.insert(e.episode_id.clone()) {
            return Err(CorpusError::DuplicateEpisodeId {
                line: l.line,
                episode_id: e.episode_id,
            });
        }
        out.push(e);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Episode>, CorpusError> {
    read_corpus(jsonl::open(path)?)
}

pub fn episode_to_value(e: &Episode) -> Value {
    let steps: Vec<Value> = e
        .steps
        .iter()
        .map(|s| {
            let mut m = Map::new();
            m.insert("step_index".into(), s.step_index.into());
            m.insert("image_ref".into(), s.image_ref.clone().into());
            m.insert("width".into(), s.resolution.width().into());
            m.insert("height".into(), s.resolution.height().into());
            m.insert("gold_action".into(), s.gold_action.to_string().into());
            if let Some(b) = s.gold_bbox {
                m.insert("gold_bbox".into(), serde_json::to_value(b).expect("bbox"));
            }
            m.insert("history_summary".into(), s.history_summary.clone().into());
            Value::Object(m)
        })
        .collect();
    let mut m = Map::new();
    m.insert("episode_id".into(), e.episode_id.clone().into());
    m.insert("goal".into(), e.goal.clone().into());
    if let Some(t) = &e.tag {
        m.insert("tag".into(), t.clone().into());
    }
    m.insert("steps".into(), Value::Array(steps));
    Value::Object(m)
}

pub fn corpus_to_string(episodes: &[Episode]) -> String {
    let values: Vec<Value> = episodes.iter().map(episode_to_value).collect();
    jsonl::to_string(None, &values)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, JsonlError> {
    Ok(jsonl::read_records_from(path)?.into_iter().map(|l| l.value).collect())
}

/// Lookup of steps by `(episode_id, step_index)`.
pub struct CorpusIndex<'a> {
    episodes: &'a [Episode],
    by_id: HashMap<&'a str, usize>,
}

impl<'a> CorpusIndex<'a> {
    pub fn new(episodes: &'a [Episode]) -> Self {
        let by_id = episodes
            .iter()
            .enumerate()
            .map(|(i, e)| (e.episode_id.as_str(), i))
            .collect();
        CorpusIndex { episodes, by_id }
    }

    pub fn episode(&self, id: &str) -> Option<&'a Episode> {
        self.by_id.get(id).map(|&i| &self.episodes[i])
    }

    pub fn resolve(&self, id: &str, step: usize) -> Option<(&'a Episode, &'a EpisodeStep)> {
        let e = self.episode(id)?;
        e.steps.get(step).map(|s| (e, s))
    }
}
