//! Reward, data-pipeline and evaluation engine for reasoning GUI agents.

pub mod action;
pub mod cli;
pub mod client;
pub mod episode;
pub mod geom;
pub mod grpo;
pub mod jsonl;
pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod reward;
pub mod score;

pub use action::{parse_action, serialize_action, Action, ActionKind, Direction, MalformedAction};
pub use geom::{BBox, Point, ScreenResolution};
pub use grpo::{advantages, Advantages, CandidateGroup};
pub use judge::{judge_memory, JudgeBackend, JudgeVerdict, MemoryJudge};
pub use reward::{action_reward, coord_action_reward, hybrid_reward, RewardBreakdown, RewardConfig};
