//! Multi-scale coordinate reward, discrete action matching and the hybrid reward.
//!
//! For coordinate actions the reward has two regimes. When the prediction is
//! within `tau_norm` of the label in resolution-normalized space it earns
//! `1 + proximity(tau_abs_1)`, otherwise `proximity(tau_abs_2)`, where
//! `proximity(tau) = 1 - dist / tau` for `dist < tau` and 0 beyond. The inner
//! comparison is inclusive and the proximity cutoff strict.

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::geom::{Point, ScreenResolution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("threshold must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// How typed text and selected options are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMatch {
    /// Byte equality.
    Exact,
    /// Outer whitespace trimmed and inner runs collapsed; case-sensitive.
    #[default]
    Whitespace,
    /// As `Whitespace`, then lowercased.
    CaseInsensitive,
}

impl TextMatch {
    pub fn normalize<'a>(self, s: &'a str) -> Cow<'a, str> {
        match self {
            TextMatch::Exact => Cow::Borrowed(s),
            TextMatch::Whitespace => Cow::Owned(s.split_whitespace().collect::<Vec<_>>().join(" ")),
            TextMatch::CaseInsensitive => Cow::Owned(s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()),
        }
    }

    pub fn matches(self, a: &str, b: &str) -> bool {
        self.normalize(a) == self.normalize(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub tau_norm: f64,
    pub tau_abs_1: f64,
    pub tau_abs_2: f64,
    pub gamma: f64,
    #[serde(default)]
    pub text_match: TextMatch,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tau_norm: 0.1,
            tau_abs_1: 40.0,
            tau_abs_2: 200.0,
            gamma: 0.2,
            text_match: TextMatch::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, v) in [
            ("tau_norm", self.tau_norm),
            ("tau_abs_1", self.tau_abs_1),
            ("tau_abs_2", self.tau_abs_2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RewardError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(RewardError::InvalidConfig(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RewardError> {
        let cfg: RewardConfig = toml::from_str(s).map_err(|e| RewardError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RewardError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: u8,
    pub action: f64,
    pub memory: u8,
    pub total: f64,
}

/// Euclidean distance in pixels.
pub fn euclid(p1: Point, p2: Point) -> f64 {
    distance((f64::from(p1.x), f64::from(p1.y)), (f64::from(p2.x), f64::from(p2.y)))
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

fn proximity(dist: f64, tau: f64) -> f64 {
    if dist < tau {
        1.0 - dist / tau
    } else {
        0.0
    }
}

/// Linear proximity score, 1 at zero distance falling to 0 at `tau`.
pub fn abs_proximity(p1: Point, p2: Point, tau: f64) -> Result<f64, RewardError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(RewardError::NonPositiveTau(tau));
    }
    Ok(proximity(euclid(p1, p2), tau))
}

/// Distance between the two points after dividing each by the screen size.
pub fn normalized_distance(pred: Point, gold: Point, res: ScreenResolution) -> f64 {
    distance(res.normalize(gold), res.normalize(pred))
}

pub fn coord_action_reward(pred: Point, gold: Point, res: ScreenResolution, cfg: &RewardConfig) -> f64 {
    let pixels = euclid(gold, pred);
    if normalized_distance(pred, gold, res) <= cfg.tau_norm {
        1.0 + proximity(pixels, cfg.tau_abs_1)
    } else {
        proximity(pixels, cfg.tau_abs_2)
    }
}

/// Same scoring as [`coord_action_reward`]; entry point for grounding samples.
pub fn grounding_reward(pred: Point, gold: Point, res: ScreenResolution, cfg: &RewardConfig) -> f64 {
    coord_action_reward(pred, gold, res, cfg)
}

/// Reward in `[0, 2]` for a predicted action against the label.
///
/// Different variants score 0. Coordinate actions use the two-regime distance
/// reward, gated on a text match for `TypeAt`/`Select`. Other actions score 1
/// when their payload (direction or text) matches.
pub fn action_reward(pred: &Action, gold: &Action, res: ScreenResolution, cfg: &RewardConfig) -> f64 {
    if pred.tag() != gold.tag() {
        return 0.0;
    }
    if let (Some(a), Some(b)) = (pred.text(), gold.text()) {
        if !cfg.text_match.matches(a, b) {
            return 0.0;
        }
    }
    match (pred, gold) {
        (Action::Scroll(a), Action::Scroll(b)) if a != b => 0.0,
        _ => match (pred.point(), gold.point()) {
            (Some(p), Some(g)) => coord_action_reward(p, g, res, cfg),
            _ => 1.0,
        },
    }
}

pub fn hybrid_reward(format: u8, action: f64, memory: u8, cfg: &RewardConfig) -> RewardBreakdown {
    debug_assert!(format <= 1 && memory <= 1);
    let total = f64::from(format) * (action + cfg.gamma * f64::from(memory));
    RewardBreakdown {
        format,
        action,
        memory,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Direction;
    use proptest::prelude::*;

    fn p(x: u32, y: u32) -> Point {
        Point::new(x, y)
    }

    fn res(w: u32, h: u32) -> ScreenResolution {
        ScreenResolution::new(w, h).unwrap()
    }

    #[test]
    fn distances() {
        assert_eq!(euclid(p(0, 0), p(0, 0)), 0.0);
        assert_eq!(euclid(p(0, 0), p(3, 4)), 5.0);
        assert_eq!(euclid(p(100, 200), p(130, 240)), 50.0);
    }

    #[test]
    fn proximity_cases() {
        assert_eq!(abs_proximity(p(0, 0), p(0, 0), 40.0).unwrap(), 1.0);
        assert_eq!(abs_proximity(p(100, 200), p(130, 240), 40.0).unwrap(), 0.0);
        assert_eq!(abs_proximity(p(100, 200), p(130, 240), 200.0).unwrap(), 0.75);
        // exactly at tau the cutoff applies
        assert_eq!(abs_proximity(p(0, 0), p(0, 40), 40.0).unwrap(), 0.0);
        assert_eq!(
            abs_proximity(p(0, 0), p(1, 1), 0.0),
            Err(RewardError::NonPositiveTau(0.0))
        );
    }

    #[test]
    fn coordinate_reward_fixtures() {
        let cfg = RewardConfig::default();
        assert_eq!(
            coord_action_reward(p(100, 200), p(100, 200), res(1000, 2000), &cfg),
            2.0
        );
        assert_eq!(
            coord_action_reward(p(130, 240), p(100, 200), res(1000, 2000), &cfg),
            1.0
        );
        assert_eq!(coord_action_reward(p(30, 40), p(0, 0), res(100, 100), &cfg), 0.75);
        let r = coord_action_reward(p(510, 510), p(500, 500), res(1000, 1000), &cfg);
        let expected = 1.0 + (1.0 - 200f64.sqrt() / 40.0);
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 1.6464).abs() < 1e-4);
    }

    #[test]
    fn grounding_matches_coordinate_reward() {
        let cfg = RewardConfig::default();
        assert_eq!(grounding_reward(p(7, 7), p(7, 7), res(50, 50), &cfg), 2.0);
        assert_eq!(grounding_reward(p(30, 40), p(0, 0), res(100, 100), &cfg), 0.75);
        assert_eq!(grounding_reward(p(300, 0), p(0, 0), res(1000, 1000), &cfg), 0.0);
    }

    #[test]
    fn discrete_action_matching() {
        let cfg = RewardConfig::default();
        let r = res(1000, 2000);
        assert_eq!(action_reward(&Action::Home, &Action::Home, r, &cfg), 1.0);
        assert_eq!(
            action_reward(
                &Action::Scroll(Direction::Up),
                &Action::Scroll(Direction::Down),
                r,
                &cfg
            ),
            0.0
        );
        assert_eq!(
            action_reward(&Action::Click(p(130, 240)), &Action::Click(p(100, 200)), r, &cfg),
            1.0
        );
        assert_eq!(
            action_reward(&Action::Click(p(1, 1)), &Action::Type("x".into()), r, &cfg),
            0.0
        );
        assert_eq!(
            action_reward(
                &Action::Type(" red  shoes".into()),
                &Action::Type("red shoes".into()),
                r,
                &cfg
            ),
            1.0
        );
        assert_eq!(
            action_reward(
                &Action::Type("Red shoes".into()),
                &Action::Type("red shoes".into()),
                r,
                &cfg
            ),
            0.0
        );
    }

    #[test]
    fn text_payload_gates_coordinate_actions() {
        let cfg = RewardConfig::default();
        let r = res(1000, 1000);
        let gold = Action::Select {
            point: p(100, 100),
            option: "Chicago".into(),
        };
        let right = Action::Select {
            point: p(100, 100),
            option: "Chicago".into(),
        };
        let wrong = Action::Select {
            point: p(100, 100),
            option: "Boston".into(),
        };
        assert_eq!(action_reward(&right, &gold, r, &cfg), 2.0);
        assert_eq!(action_reward(&wrong, &gold, r, &cfg), 0.0);
        let lenient = RewardConfig {
            text_match: TextMatch::CaseInsensitive,
            ..cfg
        };
        let shouty = Action::Select {
            point: p(100, 100),
            option: "CHICAGO".into(),
        };
        assert_eq!(action_reward(&shouty, &gold, r, &lenient), 2.0);
    }

    #[test]
    fn hybrid_fixtures() {
        let cfg = RewardConfig::default();
        assert!((hybrid_reward(1, 1.0, 1, &cfg).total - 1.2).abs() < 1e-12);
        assert_eq!(hybrid_reward(0, 2.0, 1, &cfg).total, 0.0);
        assert_eq!(hybrid_reward(1, 0.75, 0, &cfg).total, 0.75);
    }

    #[test]
    fn config_parsing() {
        let cfg =
            RewardConfig::from_toml_str("tau_norm = 0.05\ntau_abs_1 = 30\ntau_abs_2 = 150\ngamma = 0.5\n").unwrap();
        assert_eq!(cfg.tau_norm, 0.05);
        assert_eq!(cfg.text_match, TextMatch::Whitespace);
        assert!(RewardConfig::from_toml_str("tau_norm = 0\ntau_abs_1 = 1\ntau_abs_2 = 1\ngamma = 0").is_err());
        assert!(RewardConfig::from_toml_str("tau_norm = 0.1\ntau_abs_1 = 1\ntau_abs_2 = 1\ngamma = -1").is_err());
        assert!(RewardConfig::from_toml_str("bogus = 1").is_err());
    }

    fn case() -> impl Strategy<Value = (Point, Point, ScreenResolution)> {
        (1u32..3000, 1u32..3000).prop_flat_map(|(w, h)| {
            (
                (0..=w, 0..=h).prop_map(|(x, y)| Point::new(x, y)),
                (0..=w, 0..=h).prop_map(|(x, y)| Point::new(x, y)),
                Just(ScreenResolution::new(w, h).unwrap()),
            )
        })
    }

    proptest! {
        #[test]
        fn branch_separation((pred, gold, r) in case()) {
            let cfg = RewardConfig::default();
            let v = coord_action_reward(pred, gold, r, &cfg);
            if normalized_distance(pred, gold, r) <= cfg.tau_norm {
                prop_assert!((1.0..=2.0).contains(&v));
            } else {
                prop_assert!((0.0..1.0).contains(&v));
            }
        }

        #[test]
        fn monotone_along_ray((gold, r) in (1u32..2000, 1u32..2000).prop_flat_map(|(w, h)| ((0..=w, 0..=h).prop_map(|(x, y)| Point::new(x, y)), Just(ScreenResolution::new(w, h).unwrap()))),
                              dir in (0u32..5, 0u32..5), k in 0u32..300) {
            let cfg = RewardConfig::default();
            let at = |k: u32| Point::new(gold.x + dir.0 * k, gold.y + dir.1 * k);
            let (a, b) = (at(k), at(k + 1));
            let in_a = normalized_distance(a, gold, r) <= cfg.tau_norm;
            let in_b = normalized_distance(b, gold, r) <= cfg.tau_norm;
            if in_a == in_b {
                prop_assert!(coord_action_reward(b, gold, r, &cfg) <= coord_action_reward(a, gold, r, &cfg));
            }
        }

        #[test]
        fn total_bounds(format in 0u8..=1, action in 0.0f64..=2.0, memory in 0u8..=1, gamma in 0.0f64..2.0) {
            let cfg = RewardConfig { gamma, ..RewardConfig::default() };
            let b = hybrid_reward(format, action, memory, &cfg);
            prop_assert!(b.total >= 0.0 && b.total <= 2.0 + gamma);
            if format == 0 {
                prop_assert_eq!(b.total, 0.0);
            }
        }
    }
}
