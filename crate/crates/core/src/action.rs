//! The unified GUI action space: grammar, parser and canonical serializer.
//!
//! Canonical forms (see `docs/action-grammar.md` for the full EBNF):
//!
//! ```text
//! CLICK:(x,y)            LONG_PRESS:(x,y)       SCROLL:UP|DOWN|LEFT|RIGHT
//! TYPE:"text"            TYPE:(x,y,text)        SELECT:(x,y,option)
//! BACK  HOME  ENTER  PRESS_RECENT  COMPLETE  IMPOSSIBLE
//! ```
//!
//! Keywords are case-sensitive unless [`ParseOptions::case_insensitive_keywords`]
//! is set. Whitespace after the colon and around commas is accepted and dropped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
            Direction::Left => "LEFT",
            Direction::Right => "RIGHT",
        }
    }
}

/// One action from the unified action space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Click(Point),
    /// Free-text typing into whatever currently has focus.
    Type(String),
    TypeAt {
        point: Point,
        text: String,
    },
    Select {
        point: Point,
        option: String,
    },
    LongPress(Point),
    Scroll(Direction),
    Back,
    Home,
    Enter,
    PressRecent,
    Complete,
    Impossible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionTag {
    Click,
    Type,
    TypeAt,
    Select,
    LongPress,
    Scroll,
    Back,
    Home,
    Enter,
    PressRecent,
    Complete,
    Impossible,
}

impl ActionTag {
    pub const ALL: [ActionTag; 12] = [
        ActionTag::Click,
        ActionTag::Type,
        ActionTag::TypeAt,
        ActionTag::Select,
        ActionTag::LongPress,
        ActionTag::Scroll,
        ActionTag::Back,
        ActionTag::Home,
        ActionTag::Enter,
        ActionTag::PressRecent,
        ActionTag::Complete,
        ActionTag::Impossible,
    ];

    /// Keyword as written in model output. `Type` and `TypeAt` share `TYPE`.
    pub fn keyword(self) -> &'static str {
        match self {
            ActionTag::Click => "CLICK",
            ActionTag::Type | ActionTag::TypeAt => "TYPE",
            ActionTag::Select => "SELECT",
            ActionTag::LongPress => "LONG_PRESS",
            ActionTag::Scroll => "SCROLL",
            ActionTag::Back => "BACK",
            ActionTag::Home => "HOME",
            ActionTag::Enter => "ENTER",
            ActionTag::PressRecent => "PRESS_RECENT",
            ActionTag::Complete => "COMPLETE",
            ActionTag::Impossible => "IMPOSSIBLE",
        }
    }

    pub fn coordinate_bearing(self) -> bool {
        matches!(
            self,
            ActionTag::Click | ActionTag::TypeAt | ActionTag::Select | ActionTag::LongPress
        )
    }

    pub fn is_nullary(self) -> bool {
        matches!(
            self,
            ActionTag::Back
                | ActionTag::Home
                | ActionTag::Enter
                | ActionTag::PressRecent
                | ActionTag::Complete
                | ActionTag::Impossible
        )
    }
}

/// Variant tag plus whether the action targets a screen coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionKind {
    pub tag: ActionTag,
    pub coordinate_bearing: bool,
}

impl From<ActionTag> for ActionKind {
    fn from(tag: ActionTag) -> Self {
        ActionKind {
            tag,
            coordinate_bearing: tag.coordinate_bearing(),
        }
    }
}

/// Non-fatal observations about a parsed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionLint {
    EmptyText,
}

impl Action {
    pub fn tag(&self) -> ActionTag {
        match self {
            Action::Click(_) => ActionTag::Click,
            Action::Type(_) => ActionTag::Type,
            Action::TypeAt { .. } => ActionTag::TypeAt,
            Action::Select { .. } => ActionTag::Select,
            Action::LongPress(_) => ActionTag::LongPress,
            Action::Scroll(_) => ActionTag::Scroll,
            Action::Back => ActionTag::Back,
            Action::Home => ActionTag::Home,
            Action::Enter => ActionTag::Enter,
            Action::PressRecent => ActionTag::PressRecent,
            Action::Complete => ActionTag::Complete,
            Action::Impossible => ActionTag::Impossible,
        }
    }

    pub fn kind(&self) -> ActionKind {
        self.tag().into()
    }

    pub fn point(&self) -> Option<Point> {
        match self {
            Action::Click(p) | Action::LongPress(p) => Some(*p),
            Action::TypeAt { point, .. } | Action::Select { point, .. } => Some(*point),
            _ => None,
        }
    }

    /// Typed text or selected option, if the variant carries one.
    pub fn text(&self) -> Option<&str> {
        match self {
            Action::Type(t) => Some(t),
            Action::TypeAt { text, .. } => Some(text),
            Action::Select { option, .. } => Some(option),
            _ => None,
        }
    }

    pub fn lints(&self) -> Vec<ActionLint> {
        match self.text() {
            Some(t) if t.trim().is_empty() => vec![ActionLint::EmptyText],
            _ => Vec::new(),
        }
    }
}

pub fn action_kind(a: &Action) -> ActionKind {
    a.kind()
}

/// Tuple text is emitted bare unless a bare form would not survive re-parsing.
fn write_tuple_text(f: &mut fmt::Formatter<'_>, text: &str) -> fmt::Result {
    let looks_quoted = text.len() >= 2 && text.starts_with('"') && text.ends_with('"');
    if text.trim() != text || looks_quoted {
        write!(f, "\"{text}\"")
    } else {
        f.write_str(text)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click(p) => write!(f, "CLICK:({},{})", p.x, p.y),
            Action::LongPress(p) => write!(f, "LONG_PRESS:({},{})", p.x, p.y),
            Action::Type(t) => write!(f, "TYPE:\"{t}\""),
            Action::TypeAt { point, text } => {
                write!(f, "TYPE:({},{},", point.x, point.y)?;
                write_tuple_text(f, text)?;
                f.write_str(")")
            }
            Action::Select { point, option } => {
                write!(f, "SELECT:({},{},", point.x, point.y)?;
                write_tuple_text(f, option)?;
                f.write_str(")")
            }
            Action::Scroll(d) => write!(f, "SCROLL:{}", d.as_str()),
            other => f.write_str(other.tag().keyword()),
        }
    }
}

pub fn serialize_action(a: &Action) -> String {
    a.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed action at byte {offset}: {reason}")]
pub struct MalformedAction {
    pub reason: String,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept `click:(1,2)` and `scroll:up`. Off by default.
    pub case_insensitive_keywords: bool,
}

pub fn parse_action(raw: &str) -> Result<Action, MalformedAction> {
    parse_action_with(raw, ParseOptions::default())
}

pub fn parse_action_with(raw: &str, opts: ParseOptions) -> Result<Action, MalformedAction> {
    let end = raw.trim_end().len();
    let mut c = Cursor {
        src: &raw[..end],
        pos: 0,
    };
    c.skip_ws();
    if c.at_end() {
        return Err(c.error("empty action"));
    }

    let kw_start = c.pos;
    let kw = c.take_while(|ch| ch.is_ascii_alphabetic() || ch == '_');
    if kw.is_empty() {
        return Err(c.error("expected action keyword"));
    }
    let tag = lookup_keyword(kw, opts).ok_or_else(|| MalformedAction {
        reason: format!("unknown keyword `{kw}`"),
        offset: kw_start,
    })?;

    c.skip_ws();
    if tag.is_nullary() {
        if !c.at_end() {
            return Err(c.error(format!("`{}` takes no arguments", tag.keyword())));
        }
        return Ok(match tag {
            ActionTag::Back => Action::Back,
            ActionTag::Home => Action::Home,
            ActionTag::Enter => Action::Enter,
            ActionTag::PressRecent => Action::PressRecent,
            ActionTag::Complete => Action::Complete,
            _ => Action::Impossible,
        });
    }

    c.expect(':')?;
    c.skip_ws();
    match tag {
        ActionTag::Click => {
            let p = c.point_tuple()?;
            c.finish()?;
            Ok(Action::Click(p))
        }
        ActionTag::LongPress => {
            let p = c.point_tuple()?;
            c.finish()?;
            Ok(Action::LongPress(p))
        }
        ActionTag::Select => {
            let (point, option) = c.point_text_tuple()?;
            Ok(Action::Select { point, option })
        }
        ActionTag::Scroll => {
            let at = c.pos;
            let word = c.take_while(|ch| ch.is_ascii_alphabetic());
            let dir = Direction::ALL
                .into_iter()
                .find(|d| keyword_eq(d.as_str(), word, opts))
                .ok_or_else(|| MalformedAction {
                    reason: format!("bad scroll direction `{}`", c.rest_from(at)),
                    offset: at,
                })?;
            c.finish()?;
            Ok(Action::Scroll(dir))
        }
        // TYPE shares a keyword between the tuple and free-text forms.
        _ => {
            if c.peek() == Some('(') {
                let (point, text) = c.point_text_tuple()?;
                return Ok(Action::TypeAt { point, text });
            }
            let at = c.pos;
            let payload = c.rest_from(at);
            let text = if let Some(stripped) = payload.strip_prefix('"') {
                match (stripped.strip_suffix('"'), stripped.rfind('"')) {
                    (Some(inner), _) => inner,
                    (None, Some(q)) => return Err(c.error_at(at + q + 2, "unexpected text after closing quote")),
                    (None, None) => return Err(c.error_at(at, "unterminated quoted text")),
                }
            } else if payload.is_empty() {
                return Err(c.error_at(at, "missing text payload"));
            } else {
                payload
            };
            check_single_line(text, at)?;
            Ok(Action::Type(text.to_string()))
        }
    }
}

impl FromStr for Action {
    type Err = MalformedAction;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        parse_action(&raw).map_err(serde::de::Error::custom)
    }
}

fn keyword_eq(expected: &str, got: &str, opts: ParseOptions) -> bool {
    if opts.case_insensitive_keywords {
        expected.eq_ignore_ascii_case(got)
    } else {
        expected == got
    }
}

fn lookup_keyword(kw: &str, opts: ParseOptions) -> Option<ActionTag> {
    // TypeAt is resolved from the argument shape, not the keyword.
    ActionTag::ALL
        .into_iter()
        .filter(|t| *t != ActionTag::TypeAt)
        .find(|t| keyword_eq(t.keyword(), kw, opts))
}

fn check_single_line(text: &str, offset: usize) -> Result<(), MalformedAction> {
    match text.find('\n') {
        Some(i) => Err(MalformedAction {
            reason: "text payload contains a newline".into(),
            offset: offset + i,
        }),
        None => Ok(()),
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn rest_from(&self, at: usize) -> &'a str {
        &self.src[at..]
    }

    fn error(&self, reason: impl Into<String>) -> MalformedAction {
        self.error_at(self.pos, reason)
    }

    fn error_at(&self, offset: usize, reason: impl Into<String>) -> MalformedAction {
        MalformedAction {
            reason: reason.into(),
            offset,
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(ch) = self.peek() {
            if !pred(ch) {
                break;
            }
            self.pos += ch.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn skip_ws(&mut self) {
        self.take_while(char::is_whitespace);
    }

    fn expect(&mut self, want: char) -> Result<(), MalformedAction> {
        match self.peek() {
            Some(ch) if ch == want => {
                self.pos += ch.len_utf8();
                Ok(())
            }
            Some(ch) => Err(self.error(format!("expected `{want}`, found `{ch}`"))),
            None => Err(self.error(format!("expected `{want}`, found end of input"))),
        }
    }

    fn finish(&mut self) -> Result<(), MalformedAction> {
        self.skip_ws();
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    fn coordinate(&mut self) -> Result<u32, MalformedAction> {
        let at = self.pos;
        let digits = self.take_while(|ch| ch.is_ascii_digit());
        if digits.is_empty() {
            return Err(match self.peek() {
                Some('-') => self.error("coordinate must be non-negative"),
                _ => self.error("expected integer coordinate"),
            });
        }
        if matches!(self.peek(), Some('.') | Some('e') | Some('E')) {
            return Err(self.error_at(at, "non-integer coordinate"));
        }
        digits.parse().map_err(|_| self.error_at(at, "coordinate out of range"))
    }

    fn point_prefix(&mut self) -> Result<Point, MalformedAction> {
        self.expect('(')?;
        self.skip_ws();
        let x = self.coordinate()?;
        self.skip_ws();
        self.expect(',')?;
        self.skip_ws();
        let y = self.coordinate()?;
        self.skip_ws();
        Ok(Point::new(x, y))
    }

    fn point_tuple(&mut self) -> Result<Point, MalformedAction> {
        let p = self.point_prefix()?;
        self.expect(')')?;
        Ok(p)
    }

    /// `(x,y,text)` running to the end of input; the text may hold commas and parens.
    fn point_text_tuple(&mut self) -> Result<(Point, String), MalformedAction> {
        let p = self.point_prefix()?;
        self.expect(',')?;
        let at = self.pos;
        let rest = self.rest_from(at);
        let Some(inner) = rest.strip_suffix(')') else {
            return Err(self.error_at(self.src.len(), "expected `)` closing the argument list"));
        };
        let lead = inner.len() - inner.trim_start().len();
        let trimmed = inner.trim();
        let text = if trimmed.len() >= 2 && trimmed.starts_with('"') && trimmed.ends_with('"') {
            &trimmed[1..trimmed.len() - 1]
        } else {
            trimmed
        };
        check_single_line(text, at + lead)?;
        self.pos = self.src.len();
        Ok((p, text.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: u32, y: u32) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn action_table_examples_parse() {
        assert_eq!(parse_action("CLICK:(1980,224)").unwrap(), Action::Click(p(1980, 224)));
        assert_eq!(
            parse_action("TYPE:(208,1082,Macbook-Pro 16G Black)").unwrap(),
            Action::TypeAt {
                point: p(208, 1082),
                text: "Macbook-Pro 16G Black".into()
            }
        );
        assert_eq!(
            parse_action("SELECT:(59,892,Chicago)").unwrap(),
            Action::Select {
                point: p(59, 892),
                option: "Chicago".into()
            }
        );
        assert_eq!(
            parse_action("LONG_PRESS:(345,2218)").unwrap(),
            Action::LongPress(p(345, 2218))
        );
        assert_eq!(
            parse_action("TYPE:\"Macbook-Pro 16G Black\"").unwrap(),
            Action::Type("Macbook-Pro 16G Black".into())
        );
        assert_eq!(parse_action("SCROLL:UP").unwrap(), Action::Scroll(Direction::Up));
        assert_eq!(parse_action("HOME").unwrap(), Action::Home);
        assert_eq!(parse_action("PRESS_RECENT").unwrap(), Action::PressRecent);
        assert_eq!(parse_action("IMPOSSIBLE").unwrap(), Action::Impossible);
    }

    #[test]
    fn whitespace_is_tolerated() {
        assert_eq!(
            parse_action("  CLICK: ( 12 , 34 )  ").unwrap(),
            Action::Click(p(12, 34))
        );
        assert_eq!(
            parse_action("TYPE: (1, 2,  hello world )").unwrap(),
            Action::TypeAt {
                point: p(1, 2),
                text: "hello world".into()
            }
        );
        assert_eq!(
            parse_action("TYPE: typed text").unwrap(),
            Action::Type("typed text".into())
        );
        assert_eq!(parse_action("SCROLL: DOWN").unwrap(), Action::Scroll(Direction::Down));
    }

    #[test]
    fn arity_violation_is_rejected_with_offset() {
        let err = parse_action("CLICK:(12,)").unwrap_err();
        assert_eq!(err.offset, 10);
        let err = parse_action("CLICK:(12)").unwrap_err();
        assert_eq!(err.offset, 9);
        assert!(parse_action("HOME:(1,2)").is_err());
        assert!(parse_action("CLICK:(1,2,3)").is_err());
    }

    #[test]
    fn bad_tokens_rejected() {
        assert!(parse_action("TAP:(1,2)").is_err());
        assert!(parse_action("CLICK:(1.5,2)").is_err());
        assert!(parse_action("CLICK:(-1,2)").is_err());
        assert!(parse_action("SCROLL:UPWARD").is_err());
        assert!(parse_action("SCROLL:").is_err());
        assert!(parse_action("").is_err());
        assert!(parse_action("TYPE:\"abc").is_err());
        assert!(parse_action("TYPE:(1,2,abc").is_err());
    }

    #[test]
    fn keywords_are_case_sensitive_by_default() {
        assert!(parse_action("click:(1,2)").is_err());
        let lenient = ParseOptions {
            case_insensitive_keywords: true,
        };
        assert_eq!(
            parse_action_with("click:(1,2)", lenient).unwrap(),
            Action::Click(p(1, 2))
        );
        assert_eq!(
            parse_action_with("scroll:left", lenient).unwrap(),
            Action::Scroll(Direction::Left)
        );
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(
            serialize_action(&Action::LongPress(p(345, 2218))),
            "LONG_PRESS:(345,2218)"
        );
        assert_eq!(serialize_action(&Action::Scroll(Direction::Up)), "SCROLL:UP");
        assert_eq!(serialize_action(&Action::Click(p(0, 0))), "CLICK:(0,0)");
        assert_eq!(serialize_action(&Action::Type("a b".into())), "TYPE:\"a b\"");
        assert_eq!(
            serialize_action(&Action::TypeAt {
                point: p(1, 2),
                text: " padded".into()
            }),
            "TYPE:(1,2,\" padded\")"
        );
    }

    #[test]
    fn kinds() {
        let k = action_kind(&Action::Click(p(10, 10)));
        assert_eq!(k.tag, ActionTag::Click);
        assert!(k.coordinate_bearing);
        let k = action_kind(&Action::Enter);
        assert_eq!(k.tag, ActionTag::Enter);
        assert!(!k.coordinate_bearing);
        let k = action_kind(&Action::TypeAt {
            point: p(1, 1),
            text: "a".into(),
        });
        assert_eq!(k.tag, ActionTag::TypeAt);
        assert!(k.coordinate_bearing);
    }

    #[test]
    fn empty_text_is_accepted_but_linted() {
        let a = parse_action("TYPE:\"\"").unwrap();
        assert_eq!(a, Action::Type(String::new()));
        assert_eq!(a.lints(), vec![ActionLint::EmptyText]);
        let a = parse_action("TYPE:(3,4,)").unwrap();
        assert_eq!(a.lints(), vec![ActionLint::EmptyText]);
        assert!(Action::Home.lints().is_empty());
    }

    #[test]
    fn newline_in_text_rejected() {
        assert!(parse_action("TYPE:\"a\nb\"").is_err());
    }

    #[test]
    fn serde_uses_canonical_string() {
        let a = Action::Select {
            point: p(5, 6),
            option: "x, y".into(),
        };
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "\"SELECT:(5,6,x, y)\"");
        assert_eq!(serde_json::from_str::<Action>(&s).unwrap(), a);
    }

    pub(crate) fn arb_action() -> impl Strategy<Value = Action> {
        let pt = (0u32..5000, 0u32..5000).prop_map(|(x, y)| Point::new(x, y));
        let text = "[^\n]{0,24}";
        prop_oneof![
            pt.clone().prop_map(Action::Click),
            text.prop_map(Action::Type),
            (pt.clone(), text).prop_map(|(point, text)| Action::TypeAt { point, text }),
            (pt.clone(), text).prop_map(|(point, option)| Action::Select { point, option }),
            pt.prop_map(Action::LongPress),
            prop::sample::select(Direction::ALL.to_vec()).prop_map(Action::Scroll),
            Just(Action::Back),
            Just(Action::Home),
            Just(Action::Enter),
            Just(Action::PressRecent),
            Just(Action::Complete),
            Just(Action::Impossible),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(a in arb_action()) {
            let s = serialize_action(&a);
            prop_assert_eq!(parse_action(&s).unwrap(), a);
        }

        #[test]
        fn serialization_is_injective(a in arb_action(), b in arb_action()) {
            if a != b {
                prop_assert_ne!(serialize_action(&a), serialize_action(&b));
            }
        }

        #[test]
        fn parser_never_panics(s in "\\PC{0,40}") {
            let _ = parse_action(&s);
        }
    }
}
