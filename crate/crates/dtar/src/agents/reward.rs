//! Per-hop reward: direction shaping, hop penalty, and terminal bonuses.

use serde::{Deserialize, Serialize};

/// How a routing step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowOutcome {
    /// Moved one hop, flow continues.
    Step,
    /// Reached the destination domain.
    Arrived,
    /// Took a hop that ended in failure (budget exhausted).
    Failed,
    /// No admissible action existed; no hop was taken.
    DeadEnd,
}

/// Reward coefficients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Direction shaping coefficient (delta).
    pub direction: f64,
    /// Per-hop penalty (beta).
    pub hop_penalty: f64,
    /// Arrival reward (r_s).
    pub arrival: f64,
    /// Failure penalty (r_f).
    pub failure: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            direction: 1.0,
            hop_penalty: 0.05,
            arrival: 5.0,
            failure: 5.0,
        }
    }
}

/// R = delta * (d(c) - d(c')) - beta, plus (r_s - beta * h) on arrival and
/// -r_f on failure. A dead end (no action taken) yields -r_f alone.
pub fn reward(
    dist_before: Option<u32>,
    dist_after: Option<u32>,
    hops_on_arrival: usize,
    outcome: FlowOutcome,
    cfg: &RewardConfig,
) -> f64 {
    if outcome == FlowOutcome::DeadEnd {
        return -cfg.failure;
    }
    let d0 = dist_before.map_or(0.0, |d| d as f64);
    let d1 = dist_after.map_or(0.0, |d| d as f64);
    let mut r = cfg.direction * (d0 - d1) - cfg.hop_penalty;
    match outcome {
        FlowOutcome::Arrived => {
            r += cfg.arrival - cfg.hop_penalty * hops_on_arrival as f64;
        }
        FlowOutcome::Failed => {
            r -= cfg.failure;
        }
        _ => {}
    }
    r
}
