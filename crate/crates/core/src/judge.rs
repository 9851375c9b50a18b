//! Memory-awareness judge: does a think trace draw on the interaction history?
//!
//! The remote backend asks a language model with the memory-judge template.
//! The lexical backend is an offline stand-in based on token overlap and is not
//! a faithful replacement for a model judge.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::client::{request_key, ClientError, TextCompletion};
use crate::prompt::{PromptError, PromptKind, Slots, TemplateSet, SLOT_HISTORY, SLOT_OUTPUT};

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendName {
    Remote,
    Fallback,
    Replay,
    /// No backend consulted (empty history).
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub aware: bool,
    pub reason: String,
    pub backend: BackendName,
}

impl JudgeVerdict {
    pub fn reward(&self) -> u8 {
        u8::from(self.aware)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unreachable: {0}")]
    JudgeUnreachable(ClientError),
    #[error("judge response has no yes/no verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error("no cassette entry for judge request {key}")]
    CassetteMiss { key: String },
    #[error("overlap threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl From<ClientError> for JudgeError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::CassetteMiss { key } => JudgeError::CassetteMiss { key },
            other => JudgeError::JudgeUnreachable(other),
        }
    }
}

#[derive(Clone)]
pub enum JudgeBackend {
    /// A live (possibly recording) model client.
    Remote(Arc<dyn TextCompletion>),
    /// Token-overlap heuristic with a threshold in [0, 1].
    LexicalFallback(f64),
    /// A client that only serves recorded responses.
    Replay(Arc<dyn TextCompletion>),
}

impl JudgeBackend {
    pub fn name(&self) -> BackendName {
        match self {
            JudgeBackend::Remote(_) => BackendName::Remote,
            JudgeBackend::LexicalFallback(_) => BackendName::Fallback,
            JudgeBackend::Replay(_) => BackendName::Replay,
        }
    }
}

impl std::fmt::Debug for JudgeBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JudgeBackend::LexicalFallback(t) => write!(f, "LexicalFallback({t})"),
            other => write!(f, "{:?}", other.name()),
        }
    }
}

/// Prompt sent to a model judge.
pub fn judge_prompt(templates: &TemplateSet, think: &str, history: &str) -> Result<String, PromptError> {
    templates.render(
        PromptKind::MemoryJudge,
        &Slots::new()
            .with(SLOT_HISTORY, history)
            .with(SLOT_OUTPUT, format!("<think>{think}</think>")),
    )
}

/// The first standalone `yes` or `no` token, case-insensitively.
pub fn parse_verdict(response: &str) -> Result<bool, JudgeError> {
    for token in response.split(|c: char| !c.is_alphanumeric()) {
        if token.eq_ignore_ascii_case("yes") {
            return Ok(true);
        }
        if token.eq_ignore_ascii_case("no") {
            return Ok(false);
        }
    }
    Err(JudgeError::UnparseableVerdict(response.to_string()))
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "being", "but", "by", "can", "could", "did", "do", "does", "doing", "for", "from", "had", "has", "have", "having",
    "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "my", "now",
    "of", "on", "once", "or", "other", "our", "out", "she", "should", "so", "some", "such", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "to", "too", "up", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "will", "with", "would", "you", "your",
];

/// Lowercased alphanumeric tokens with stopwords removed.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

fn strip_numbering(line: &str) -> &str {
    let t = line.trim_start();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        if let Some(rest) = t[digits..].strip_prefix(['.', ')']) {
            return rest;
        }
    }
    t
}

/// Share of a history line's content tokens that also occur in `think`.
pub fn line_overlap(line: &str, think_tokens: &BTreeSet<String>) -> Option<f64> {
    let h = content_tokens(strip_numbering(line));
    if h.is_empty() {
        return None;
    }
    let shared = h.iter().filter(|t| think_tokens.contains(*t)).count();
    Some(shared as f64 / h.len() as f64)
}

pub fn lexical_verdict(think: &str, history: &str, threshold: f64) -> Result<JudgeVerdict, JudgeError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(JudgeError::InvalidThreshold(threshold));
    }
    let t = content_tokens(think);
    let best = history
        .lines()
        .enumerate()
        .filter_map(|(i, line)| line_overlap(line, &t).map(|o| (i + 1, o)))
        .fold(None::<(usize, f64)>, |acc, cur| match acc {
            Some(a) if a.1 >= cur.1 => Some(a),
            _ => Some(cur),
        });
    let (aware, reason) = match best {
        Some((line, o)) if o >= threshold => (true, format!("history line {line} overlap {o:.3}")),
        Some((line, o)) => (false, format!("best overlap {o:.3} at history line {line}")),
        None => (false, "history has no content tokens".to_string()),
    };
    Ok(JudgeVerdict {
        aware,
        reason,
        backend: BackendName::Fallback,
    })
}

fn is_empty_history(history: &str) -> bool {
    history.trim().is_empty()
}

fn no_history() -> JudgeVerdict {
    JudgeVerdict {
        aware: false,
        reason: "no history".to_string(),
        backend: BackendName::None,
    }
}

/// One-shot judgment with the built-in templates and no caching.
pub fn judge_memory(think: &str, history: &str, backend: &JudgeBackend) -> Result<JudgeVerdict, JudgeError> {
    judge_with(TemplateSet::builtin(), think, history, backend)
}

fn judge_with(
    templates: &TemplateSet,
    think: &str,
    history: &str,
    backend: &JudgeBackend,
) -> Result<JudgeVerdict, JudgeError> {
    if is_empty_history(history) {
        return Ok(no_history());
    }
    match backend {
        JudgeBackend::LexicalFallback(th) => lexical_verdict(think, history, *th),
        JudgeBackend::Remote(client) | JudgeBackend::Replay(client) => {
            let prompt = judge_prompt(templates, think, history)?;
            let response = client.complete(&prompt)?;
            let aware = parse_verdict(&response)?;
            Ok(JudgeVerdict {
                aware,
                reason: response.trim().to_string(),
                backend: backend.name(),
            })
        }
    }
}

/// A judge bound to one backend with a verdict cache keyed by request hash.
pub struct MemoryJudge {
    backend: JudgeBackend,
    templates: TemplateSet,
    cache: RwLock<HashMap<String, JudgeVerdict>>,
}

impl MemoryJudge {
    pub fn new(backend: JudgeBackend) -> Self {
        Self::with_templates(backend, TemplateSet::builtin().clone())
    }

    pub fn with_templates(backend: JudgeBackend, templates: TemplateSet) -> Self {
        MemoryJudge {
            backend,
            templates,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn backend(&self) -> &JudgeBackend {
        &self.backend
    }

    pub fn judge(&self, think: &str, history: &str) -> Result<JudgeVerdict, JudgeError> {
        if is_empty_history(history) {
            return Ok(no_history());
        }
        if let JudgeBackend::LexicalFallback(_) = self.backend {
            return judge_with(&self.templates, think, history, &self.backend);
        }
        let key = request_key(&judge_prompt(&self.templates, think, history)?);
        if let Some(v) = self.cache.read().expect("verdict cache").get(&key) {
            return Ok(v.clone());
        }
        let v = judge_with(&self.templates, think, history, &self.backend)?;
        self.cache
            .write()
            .expect("verdict cache")
            .entry(key)
            .or_insert_with(|| v.clone());
        Ok(v)
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("verdict cache").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{Cassette, CassetteEntry, ReplayClient};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Canned(&'static str, AtomicUsize);

    impl TextCompletion for Canned {
        fn complete(&self, _prompt: &str) -> Result<String, ClientError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn fallback_example() {
        let v = judge_memory(
            "After tapping search I should type the query.",
            "1. tapped search",
            &JudgeBackend::LexicalFallback(0.5),
        )
        .unwrap();
        assert!(v.aware, "{v:?}");
        assert_eq!(v.backend, BackendName::Fallback);
    }

    #[test]
    fn empty_history_is_not_aware() {
        for backend in [
            JudgeBackend::LexicalFallback(0.0),
            JudgeBackend::Remote(Arc::new(Canned("yes", AtomicUsize::new(0)))),
        ] {
            let v = judge_memory("anything at all", "  \n", &backend).unwrap();
            assert!(!v.aware);
            assert_eq!(v.reason, "no history");
        }
    }

    #[test]
    fn remote_yes_maps_to_aware() {
        let client = Arc::new(Canned("yes, the trace cites step 2", AtomicUsize::new(0)));
        let v = judge_memory("t", "1. opened app", &JudgeBackend::Remote(client)).unwrap();
        assert!(v.aware);
        assert_eq!(v.reward(), 1);
    }

    #[test]
    fn verdict_parsing() {
        assert!(parse_verdict("Yes.").unwrap());
        assert!(!parse_verdict("NO - it ignores history").unwrap());
        assert!(!parse_verdict("The answer: no, yes later").unwrap());
        // substrings do not count
        assert!(parse_verdict("yesterday nothing").is_err());
        assert!(matches!(parse_verdict("maybe"), Err(JudgeError::UnparseableVerdict(_))));
    }

    #[test]
    fn replay_miss_is_reported() {
        let replay = ReplayClient::new(Arc::new(Cassette::from_entries([])));
        let err = judge_memory("t", "1. a", &JudgeBackend::Replay(Arc::new(replay))).unwrap_err();
        assert!(matches!(err, JudgeError::CassetteMiss { .. }));
    }

    #[test]
    fn replay_serves_recorded_verdict() {
        let prompt = judge_prompt(TemplateSet::builtin(), "t", "1. a").unwrap();
        let cassette = Cassette::from_entries([CassetteEntry {
            key: request_key(&prompt),
            prompt,
            response: "no".into(),
        }]);
        let replay = Arc::new(ReplayClient::new(Arc::new(cassette)));
        let v = judge_memory("t", "1. a", &JudgeBackend::Replay(replay)).unwrap();
        assert!(!v.aware);
        assert_eq!(v.backend, BackendName::Replay);
    }

    #[test]
    fn judge_prompt_wraps_think() {
        let p = judge_prompt(TemplateSet::builtin(), "I clicked", "1. a\n2. b").unwrap();
        assert!(p.contains("<history>1. a\n2. b </history>"));
        assert!(p.contains("<think>I clicked</think>"));
    }

    #[test]
    fn cache_avoids_repeat_calls() {
        let client = Arc::new(Canned("no", AtomicUsize::new(0)));
        let judge = MemoryJudge::new(JudgeBackend::Remote(client.clone()));
        for _ in 0..3 {
            judge.judge("x", "1. y").unwrap();
        }
        assert_eq!(client.1.load(Ordering::SeqCst), 1);
        assert_eq!(judge.cached(), 1);
    }

    #[test]
    fn threshold_validated() {
        assert!(matches!(
            lexical_verdict("a", "b", 1.5),
            Err(JudgeError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn numbering_is_not_content() {
        let t = content_tokens("2 items");
        assert_eq!(line_overlap("2. items", &t), Some(1.0));
        assert_eq!(line_overlap("3) ", &t), None);
    }

    fn words() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-z]{1,8}", 0..12).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn fallback_is_deterministic(think in words(), history in words(), th in 0.0f64..=1.0) {
            let a = lexical_verdict(&think, &history, th).unwrap();
            let b = lexical_verdict(&think, &history, th).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn appending_history_text_keeps_awareness(
            think in words(),
            lines in prop::collection::vec(words(), 1..4),
            pick in 0usize..4,
            th in 0.0f64..=1.0,
        ) {
            let history = lines.iter().enumerate()
                .map(|(i, l)| format!("{}. {l}", i + 1))
                .collect::<Vec<_>>()
                .join("\n");
            let before = judge_memory(&think, &history, &JudgeBackend::LexicalFallback(th)).unwrap();
            let extra = &lines[pick % lines.len()];
            let after = judge_memory(&format!("{think} {extra}"), &history, &JudgeBackend::LexicalFallback(th)).unwrap();
            prop_assert!(!before.aware || after.aware);
        }
    }
}
