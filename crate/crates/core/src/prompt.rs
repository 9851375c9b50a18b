//! Instruction templates, tagged-output extraction and the rule-based format reward.
//!
//! Templates live as plain text under `assets/templates/` and are embedded at
//! build time; [`TemplateSet::from_dir`] loads a patched copy at runtime.
//! Placeholders are bracketed upper-case names such as `[GOAL]`. Substitution is
//! a single literal pass: slot values are never re-scanned.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{parse_action_with, ParseOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    InferenceS2,
    InferenceS1,
    Reflection,
    GuidanceSynthesis,
    Act2Sum,
    MemoryJudge,
    Grounding,
}

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::InferenceS2,
        PromptKind::InferenceS1,
        PromptKind::Reflection,
        PromptKind::GuidanceSynthesis,
        PromptKind::Act2Sum,
        PromptKind::MemoryJudge,
        PromptKind::Grounding,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::InferenceS2 => "inference_s2.txt",
            PromptKind::InferenceS1 => "inference_s1.txt",
            PromptKind::Reflection => "reflection.txt",
            PromptKind::GuidanceSynthesis => "guidance_synthesis.txt",
            PromptKind::Act2Sum => "act2sum.txt",
            PromptKind::MemoryJudge => "memory_judge.txt",
            PromptKind::Grounding => "grounding.txt",
        }
    }

    /// Tags a reply to this prompt must carry.
    pub fn required_tags(self) -> &'static [Tag] {
        match self {
            PromptKind::InferenceS2 => &[Tag::Think, Tag::Answer],
            PromptKind::InferenceS1 => &[Tag::Answer],
            PromptKind::Reflection => &[Tag::Statement, Tag::Think, Tag::Answer],
            PromptKind::GuidanceSynthesis => &[Tag::Think, Tag::Guidelines],
            PromptKind::Act2Sum => &[Tag::Summary],
            PromptKind::MemoryJudge | PromptKind::Grounding => &[],
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            PromptKind::InferenceS2 => include_str!("../assets/templates/inference_s2.txt"),
            PromptKind::InferenceS1 => include_str!("../assets/templates/inference_s1.txt"),
            PromptKind::Reflection => include_str!("../assets/templates/reflection.txt"),
            PromptKind::GuidanceSynthesis => {
                include_str!("../assets/templates/guidance_synthesis.txt")
            }
            PromptKind::Act2Sum => include_str!("../assets/templates/act2sum.txt"),
            PromptKind::MemoryJudge => include_str!("../assets/templates/memory_judge.txt"),
            PromptKind::Grounding => include_str!("../assets/templates/grounding.txt"),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        f.write_str(s.as_str().expect("string"))
    }
}

pub const SLOT_GOAL: &str = "GOAL";
pub const SLOT_ACTION_SPACE: &str = "ACTION SPACE";
pub const SLOT_HISTORY: &str = "PREVIOUSLY PERFORMED ACTIONS";
pub const SLOT_GUIDELINES: &str = "GUIDELINES";
pub const SLOT_ERROR_THINK: &str = "ERROR THINK";
pub const SLOT_ERROR_ANSWER: &str = "ERROR ANSWER";
pub const SLOT_GROUND_TRUTH: &str = "GROUND TRUTH ACTION";
pub const SLOT_OUTPUT: &str = "OUTPUT";
pub const SLOT_DESCRIPTIONS: &str = "DESCRIPTIONS";
pub const SLOT_ACTION: &str = "ACTION";

/// Marker in the guidance template standing for the whole inference prompt.
const INFERENCE_INCLUDE: &str = "[The Template for System-2 Episodic Reasoning]";

/// Default `[ACTION SPACE]` text: the unified action table, one action per line.
pub const DEFAULT_ACTION_SPACE: &str = include_str!("../assets/action_space.txt");

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([A-Z][A-Z ]*[A-Z]|[A-Z])\]").expect("valid regex"))
}

/// Named values substituted into a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slots(BTreeMap<String, String>);

impl Slots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn insert(&mut self, name: &str, value: impl Into<String>) {
        self.0.insert(name.to_string(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing slot `{0}`")]
    MissingSlot(String),
    #[error("slot `{0}` is not used by this template")]
    UnknownSlot(String),
    #[error("template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<PromptKind, String>,
    action_space: String,
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl TemplateSet {
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| TemplateSet {
            templates: PromptKind::ALL
                .into_iter()
                .map(|k| (k, strip_final_newline(k.builtin_text()).to_string()))
                .collect(),
            action_space: strip_final_newline(DEFAULT_ACTION_SPACE).to_string(),
        })
    }

    /// Loads `<kind>.txt` files from `dir`, falling back to the built-in text for absent files.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, PromptError> {
        let mut set = TemplateSet::builtin().clone();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(kind, strip_final_newline(&text).to_string());
            }
        }
        let space = dir.join("action_space.txt");
        if space.exists() {
            let text = std::fs::read_to_string(&space).map_err(|source| PromptError::Io {
                path: space.display().to_string(),
                source,
            })?;
            set.action_space = strip_final_newline(&text).to_string();
        }
        Ok(set)
    }

    pub fn action_space(&self) -> &str {
        &self.action_space
    }

    /// Template text with the inference prompt spliced into the guidance template.
    pub fn expanded(&self, kind: PromptKind) -> String {
        let text = &self.templates[&kind];
        if text.contains(INFERENCE_INCLUDE) {
            text.replace(INFERENCE_INCLUDE, &self.templates[&PromptKind::InferenceS2])
        } else {
            text.clone()
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self, kind: PromptKind) -> Vec<String> {
        let text = self.expanded(kind);
        let mut seen = BTreeSet::new();
        placeholder_re()
            .captures_iter(&text)
            .map(|c| c[1].to_string())
            .filter(|n| seen.insert(n.clone()))
            .collect()
    }

    /// Substitutes every placeholder. `[ACTION SPACE]` defaults to the unified table.
    pub fn render(&self, kind: PromptKind, slots: &Slots) -> Result<String, PromptError> {
        let names = self.placeholders(kind);
        if let Some(extra) = slots.0.keys().find(|k| !names.contains(k)) {
            return Err(PromptError::UnknownSlot(extra.clone()));
        }
        for name in &names {
            if slots.get(name).is_none() && name != SLOT_ACTION_SPACE {
                return Err(PromptError::MissingSlot(name.clone()));
            }
        }
        let text = self.expanded(kind);
        let out = placeholder_re().replace_all(&text, |c: &regex::Captures<'_>| {
            let name = &c[1];
            slots.get(name).unwrap_or(self.action_space.as_str()).to_string()
        });
        Ok(out.into_owned())
    }
}

pub fn render(kind: PromptKind, slots: &Slots) -> Result<String, PromptError> {
    TemplateSet::builtin().render(kind, slots)
}

/// True if `text` still holds a bracketed upper-case placeholder.
pub fn has_placeholder(text: &str) -> bool {
    placeholder_re().is_match(text) || text.contains(INFERENCE_INCLUDE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Statement,
    Think,
    Answer,
    Guidelines,
    Summary,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::Statement, Tag::Think, Tag::Answer, Tag::Guidelines, Tag::Summary];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Statement => "statement",
            Tag::Think => "think",
            Tag::Answer => "answer",
            Tag::Guidelines => "guidelines",
            Tag::Summary => "summary",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Span of a tag pair in the raw text: open-tag start and close-tag end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaggedOutput {
    pub statement: Option<String>,
    pub think: Option<String>,
    pub answer: Option<String>,
    pub guidelines: Option<String>,
    pub summary: Option<String>,
    pub raw: String,
    spans: [Option<TagSpan>; 5],
}

impl TaggedOutput {
    pub fn get(&self, tag: Tag) -> Option<&str> {
        match tag {
            Tag::Statement => self.statement.as_deref(),
            Tag::Think => self.think.as_deref(),
            Tag::Answer => self.answer.as_deref(),
            Tag::Guidelines => self.guidelines.as_deref(),
            Tag::Summary => self.summary.as_deref(),
        }
    }

    pub fn span(&self, tag: Tag) -> Option<TagSpan> {
        self.spans[tag.index()]
    }
}

fn any_tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<(/?)(statement|think|answer|guidelines|summary)>").expect("valid regex"))
}

/// Every vocabulary tag opened inside `s` is closed inside it, in nesting order.
fn balanced(s: &str) -> bool {
    let mut stack: Vec<&str> = Vec::new();
    for c in any_tag_re().captures_iter(s) {
        let name = c.get(2).expect("group").as_str();
        if c[1].is_empty() {
            stack.push(name);
        } else if stack.pop() != Some(name) {
            return false;
        }
    }
    stack.is_empty()
}

fn find_tag(raw: &str, tag: Tag) -> Option<(String, TagSpan)> {
    let open = format!("<{}>", tag.name());
    let close = format!("</{}>", tag.name());
    let mut from = 0;
    while let Some(rel) = raw[from..].find(&open) {
        let start = from + rel;
        let body = start + open.len();
        let end_rel = raw[body..].find(&close)?;
        let content = &raw[body..body + end_rel];
        if balanced(content) {
            let end = body + end_rel + close.len();
            return Some((content.trim().to_string(), TagSpan { start, end }));
        }
        from = body;
    }
    None
}

/// Pulls the first well-nested occurrence of each vocabulary tag. Never fails.
pub fn extract_tags(raw: &str) -> TaggedOutput {
    let mut out = TaggedOutput {
        raw: raw.to_string(),
        ..Default::default()
    };
    for tag in Tag::ALL {
        if let Some((content, span)) = find_tag(raw, tag) {
            out.spans[tag.index()] = Some(span);
            let slot = match tag {
                Tag::Statement => &mut out.statement,
                Tag::Think => &mut out.think,
                Tag::Answer => &mut out.answer,
                Tag::Guidelines => &mut out.guidelines,
                Tag::Summary => &mut out.summary,
            };
            *slot = Some(content);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("format reward is undefined for {0} prompts")]
pub struct UnsupportedKind(pub PromptKind);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatPolicy {
    /// Also require canonical tag order and no text outside the required tags.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub case_insensitive_keywords: bool,
}

pub fn check_format(out: &TaggedOutput, kind: PromptKind) -> Result<u8, UnsupportedKind> {
    check_format_with(out, kind, FormatPolicy::default())
}

/// 1 when every required tag is present and non-empty and the answer parses.
pub fn check_format_with(out: &TaggedOutput, kind: PromptKind, policy: FormatPolicy) -> Result<u8, UnsupportedKind> {
    if !matches!(
        kind,
        PromptKind::InferenceS2 | PromptKind::InferenceS1 | PromptKind::Reflection
    ) {
        return Err(UnsupportedKind(kind));
    }
    let required = kind.required_tags();
    if required.iter().any(|t| out.get(*t).is_none_or(|c| c.is_empty())) {
        return Ok(0);
    }
    let parse = ParseOptions {
        case_insensitive_keywords: policy.case_insensitive_keywords,
    };
    if parse_action_with(out.answer.as_deref().unwrap_or_default(), parse).is_err() {
        return Ok(0);
    }
    if policy.strict {
        let spans: Vec<TagSpan> = required.iter().filter_map(|t| out.span(*t)).collect();
        let ordered = spans.windows(2).all(|w| w[0].end <= w[1].start);
        if !ordered {
            return Ok(0);
        }
        let mut cursor = 0;
        for s in &spans {
            if !out.raw[cursor..s.start].trim().is_empty() {
                return Ok(0);
            }
            cursor = s.end;
        }
        if !out.raw[cursor..].trim().is_empty() {
            return Ok(0);
        }
    }
    Ok(1)
}

pub const MAX_GUIDELINES: usize = 3;

/// Between one and three correction hints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct GuidelineSet {
    items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuidelineError {
    #[error("response has no <guidelines> tag")]
    NoGuidelinesTag,
    #[error("guidelines tag holds no items")]
    EmptyGuidelines,
    #[error("at most {MAX_GUIDELINES} guidelines allowed, got {0}")]
    TooMany(usize),
}

impl GuidelineSet {
    pub fn new(items: Vec<String>) -> Result<Self, GuidelineError> {
        match items.len() {
            0 => Err(GuidelineError::EmptyGuidelines),
            n if n > MAX_GUIDELINES => Err(GuidelineError::TooMany(n)),
            _ => Ok(GuidelineSet { items }),
        }
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl TryFrom<Vec<String>> for GuidelineSet {
    type Error = GuidelineError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        GuidelineSet::new(v)
    }
}

impl From<GuidelineSet> for Vec<String> {
    fn from(g: GuidelineSet) -> Self {
        g.items
    }
}

/// Numbered-list form used in the reflection prompt: `1. a; 2. b`.
impl fmt::Display for GuidelineSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}. {}", i + 1, item)?;
        }
        Ok(())
    }
}

fn list_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[;\n]|[.!?:]\s)\s*(\d+)\s*[.)]").expect("valid regex"))
}

fn clean_item(s: &str) -> Option<String> {
    let t = s.trim().trim_end_matches(';').trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Splits the `<guidelines>` body of a teacher reply into at most three items.
pub fn parse_guidelines(raw: &str) -> Result<GuidelineSet, GuidelineError> {
    let body = extract_tags(raw).guidelines.ok_or(GuidelineError::NoGuidelinesTag)?;
    // list markers count only while their numbers run consecutively
    let mut markers: Vec<(usize, usize)> = Vec::new();
    let mut expected: Option<u64> = None;
    for c in list_marker_re().captures_iter(&body) {
        let Ok(n) = c[1].parse::<u64>() else { continue };
        if expected.is_none_or(|e| e == n) {
            let digits = c.get(1).expect("number group");
            markers.push((digits.start(), c.get(0).expect("whole match").end()));
            expected = Some(n + 1);
        }
    }
    let mut items: Vec<String> = if markers.is_empty() {
        body.lines().filter_map(clean_item).collect()
    } else {
        markers
            .iter()
            .enumerate()
            .filter_map(|(i, &(_, content_start))| {
                let content_end = markers.get(i + 1).map_or(body.len(), |m| m.0);
                clean_item(&body[content_start..content_end])
            })
            .collect()
    };
    items.truncate(MAX_GUIDELINES);
    GuidelineSet::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s2_slots() -> Slots {
        Slots::new()
            .with(SLOT_GOAL, "g")
            .with(SLOT_HISTORY, "")
            .with(SLOT_ACTION_SPACE, "CLICK:(x, y)")
    }

    #[test]
    fn renders_inference_prompt() {
        let p = render(PromptKind::InferenceS2, &s2_slots()).unwrap();
        assert!(p.contains("<goal>g</goal>"));
        assert!(p.contains("<history>  </history>"));
        assert!(!has_placeholder(&p));
    }

    #[test]
    fn missing_and_unknown_slots() {
        let slots = Slots::new()
            .with(SLOT_GOAL, "g")
            .with(SLOT_HISTORY, "h")
            .with(SLOT_ERROR_THINK, "t")
            .with(SLOT_ERROR_ANSWER, "HOME");
        match render(PromptKind::Reflection, &slots) {
            Err(PromptError::MissingSlot(n)) => assert_eq!(n, "GUIDELINES"),
            other => panic!("unexpected {other:?}"),
        }
        let extra = s2_slots().with(SLOT_GUIDELINES, "x");
        assert!(matches!(
            render(PromptKind::InferenceS2, &extra),
            Err(PromptError::UnknownSlot(n)) if n == "GUIDELINES"
        ));
    }

    #[test]
    fn act2sum_defaults_action_space() {
        let p = render(
            PromptKind::Act2Sum,
            &Slots::new().with(SLOT_GOAL, "g").with(SLOT_ACTION, "HOME"),
        )
        .unwrap();
        assert!(p.contains("<action>HOME</action>"));
        assert!(p.contains("LONG_PRESS:(x, y)"));
    }

    #[test]
    fn guidance_template_embeds_inference_prompt() {
        let set = TemplateSet::builtin();
        let names = set.placeholders(PromptKind::GuidanceSynthesis);
        assert_eq!(
            names,
            vec![
                SLOT_ACTION_SPACE,
                SLOT_GOAL,
                SLOT_HISTORY,
                SLOT_ERROR_THINK,
                SLOT_ERROR_ANSWER,
                SLOT_GROUND_TRUTH
            ]
        );
        let p = set
            .render(
                PromptKind::GuidanceSynthesis,
                &Slots::new()
                    .with(SLOT_GOAL, "buy shoes")
                    .with(SLOT_HISTORY, "1. opened app")
                    .with(SLOT_ERROR_THINK, "scroll")
                    .with(SLOT_ERROR_ANSWER, "SCROLL:UP")
                    .with(SLOT_GROUND_TRUTH, "CLICK:(1,2)"),
            )
            .unwrap();
        assert!(p.contains("Model Input: You are a skilled assistant"));
        assert!(p.contains("<goal>buy shoes</goal>"));
        assert!(!has_placeholder(&p));
    }

    #[test]
    fn grounding_keeps_literal_coordinate_hint() {
        let p = render(
            PromptKind::Grounding,
            &Slots::new().with(SLOT_DESCRIPTIONS, "search button"),
        )
        .unwrap();
        assert!(p.contains("description: search button."));
        assert!(p.contains("\"point_2d\": [x,y]"));
    }

    #[test]
    fn slot_values_are_not_rescanned() {
        let p = render(
            PromptKind::InferenceS2,
            &s2_slots().with(SLOT_GOAL, "literal [GOAL] text"),
        )
        .unwrap();
        assert!(p.contains("<goal>literal [GOAL] text</goal>"));
    }

    #[test]
    fn templates_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("grounding.txt"), "Find [DESCRIPTIONS]\n").unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        let p = set
            .render(PromptKind::Grounding, &Slots::new().with(SLOT_DESCRIPTIONS, "x"))
            .unwrap();
        assert_eq!(p, "Find x");
    }

    #[test]
    fn extraction_basics() {
        let t = extract_tags("<think>a</think><answer>HOME</answer>");
        assert_eq!(t.think.as_deref(), Some("a"));
        assert_eq!(t.answer.as_deref(), Some("HOME"));
        assert_eq!(t.statement, None);

        assert_eq!(extract_tags("<answer>HOME").answer, None);

        let t = extract_tags("<statement>s</statement><think>t</think><answer>BACK</answer>");
        assert!(t.statement.is_some() && t.think.is_some() && t.answer.is_some());
    }

    #[test]
    fn crossing_tags_leave_fields_absent() {
        let t = extract_tags("<think>a<answer>b</think>c</answer>");
        assert_eq!(t.think, None);
        assert_eq!(t.answer, None);
    }

    #[test]
    fn first_occurrence_wins() {
        let t = extract_tags("<answer>HOME</answer><answer>BACK</answer>");
        assert_eq!(t.answer.as_deref(), Some("HOME"));
    }

    #[test]
    fn format_reward_rules() {
        let r = extract_tags("<think>t</think><answer>BACK</answer>");
        assert_eq!(check_format(&r, PromptKind::Reflection).unwrap(), 0);
        let r = extract_tags("<think>t</think><answer>CLICK:(5,5)</answer>");
        assert_eq!(check_format(&r, PromptKind::InferenceS2).unwrap(), 1);
        let r = extract_tags("<answer>garbage</answer>");
        assert_eq!(check_format(&r, PromptKind::InferenceS1).unwrap(), 0);
        let r = extract_tags("<think> </think><answer>HOME</answer>");
        assert_eq!(check_format(&r, PromptKind::InferenceS2).unwrap(), 0);
        assert!(check_format(&r, PromptKind::MemoryJudge).is_err());
    }

    #[test]
    fn strict_mode_checks_order_and_stray_text() {
        let strict = FormatPolicy {
            strict: true,
            ..Default::default()
        };
        let ok = extract_tags(" <think>t</think>\n<answer>HOME</answer> ");
        assert_eq!(check_format_with(&ok, PromptKind::InferenceS2, strict).unwrap(), 1);
        let reversed = extract_tags("<answer>HOME</answer><think>t</think>");
        assert_eq!(check_format(&reversed, PromptKind::InferenceS2).unwrap(), 1);
        assert_eq!(
            check_format_with(&reversed, PromptKind::InferenceS2, strict).unwrap(),
            0
        );
        let prose = extract_tags("Sure! <think>t</think><answer>HOME</answer>");
        assert_eq!(check_format_with(&prose, PromptKind::InferenceS2, strict).unwrap(), 0);
    }

    #[test]
    fn guideline_parsing() {
        let g = parse_guidelines("<guidelines>1. Check history; 2. Read the banner</guidelines>").unwrap();
        assert_eq!(g.items(), ["Check history", "Read the banner"]);

        let g = parse_guidelines("<guidelines>1. a; 2. b; 3. c; 4. d</guidelines>").unwrap();
        assert_eq!(g.items(), ["a", "b", "c"]);

        assert_eq!(parse_guidelines("no tags here"), Err(GuidelineError::NoGuidelinesTag));
        assert_eq!(
            parse_guidelines("<guidelines> </guidelines>"),
            Err(GuidelineError::EmptyGuidelines)
        );

        let g = parse_guidelines("<guidelines>\n1) Look at step 2.\n2) Zoom to 1.5x\n</guidelines>").unwrap();
        assert_eq!(g.items(), ["Look at step 2.", "Zoom to 1.5x"]);

        let g = parse_guidelines("<guidelines>1.Guideline 1; 2.Guideline 2</guidelines>").unwrap();
        assert_eq!(g.items(), ["Guideline 1", "Guideline 2"]);

        let g = parse_guidelines("<guidelines>1. Look first. 2. Then tap.</guidelines>").unwrap();
        assert_eq!(g.items(), ["Look first.", "Then tap."]);

        let g = parse_guidelines("<guidelines>1. Use version 2. 3. Retry</guidelines>").unwrap();
        assert_eq!(g.items(), ["Use version 2. 3. Retry"]);

        let g = parse_guidelines("<guidelines>Check the header\nUse history</guidelines>").unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn guideline_display_is_reparseable() {
        let g = GuidelineSet::new(vec!["a b".into(), "c".into()]).unwrap();
        assert_eq!(g.to_string(), "1. a b; 2. c");
        let again = parse_guidelines(&format!("<guidelines>{g}</guidelines>")).unwrap();
        assert_eq!(again, g);
    }

    fn tag_soup() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            Just("<think>".to_string()),
            Just("</think>".to_string()),
            Just("<answer>".to_string()),
            Just("</answer>".to_string()),
            Just("<statement>".to_string()),
            Just("</statement>".to_string()),
            Just("HOME".to_string()),
            Just("CLICK:(1,2)".to_string()),
            Just(" ".to_string()),
            "[a-z ]{0,6}",
        ];
        prop::collection::vec(piece, 0..12).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn absent_required_tag_means_zero(raw in tag_soup()) {
            let out = extract_tags(&raw);
            for kind in [PromptKind::InferenceS2, PromptKind::InferenceS1, PromptKind::Reflection] {
                let missing = kind.required_tags().iter().any(|t| out.get(*t).is_none());
                if missing {
                    prop_assert_eq!(check_format(&out, kind).unwrap(), 0);
                }
            }
        }

        #[test]
        fn guidelines_never_exceed_three(items in prop::collection::vec("[a-z ]{1,10}", 1..8)) {
            let body: Vec<String> = items.iter().enumerate().map(|(i, s)| format!("{}. {}", i + 1, s)).collect();
            let raw = format!("<guidelines>{}</guidelines>", body.join("; "));
            if let Ok(g) = parse_guidelines(&raw) {
                prop_assert!(g.len() <= 3 && !g.is_empty());
            }
        }

        #[test]
        fn rendered_prompts_have_no_placeholders(goal in "[a-z ]{0,12}", hist in "[a-z0-9. \n]{0,20}") {
            let p = render(PromptKind::InferenceS2, &Slots::new().with(SLOT_GOAL, goal).with(SLOT_HISTORY, hist)).unwrap();
            prop_assert!(!has_placeholder(&p));
        }
    }
}
