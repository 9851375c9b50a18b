//! Group-relative advantage normalization.

use serde::{Deserialize, Serialize};

use crate::reward::RewardBreakdown;

/// Below this population standard deviation a group is treated as uniform.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub group_id: String,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakdowns: Vec<RewardBreakdown>,
}

impl CandidateGroup {
    pub fn new(group_id: impl Into<String>, rewards: Vec<f64>) -> Self {
        CandidateGroup {
            group_id: group_id.into(),
            rewards,
            breakdowns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantages {
    pub values: Vec<f64>,
    /// Set when every reward in the group was equal; all values are then 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("group `{group_id}` has {size} candidate(s); at least 2 are required")]
pub struct GroupTooSmall {
    pub group_id: String,
    pub size: usize,
}

/// `(r_i - mean) / std` with the population (divide-by-N) standard deviation.
pub fn advantages(g: &CandidateGroup) -> Result<Advantages, GroupTooSmall> {
    let n = g.rewards.len();
    if n < 2 {
        return Err(GroupTooSmall {
            group_id: g.group_id.clone(),
            size: n,
        });
    }
    let count = n as f64;
    let mean = g.rewards.iter().sum::<f64>() / count;
    let var = g.rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok(Advantages {
            values: vec![0.0; n],
            degenerate: true,
        });
    }
    Ok(Advantages {
        values: g.rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}
