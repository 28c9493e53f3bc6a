//! The generic hop-by-hop routing loop and episode orchestration.

use super::env::{EpisodeOutcome, FlowRequest, ScenarioKind, SimEnv, World};
use crate::agents::{reward, DecisionContext, FlowOutcome, RewardConfig};
use crate::domain::{action_mask_with, hop_distances};
use crate::error::Result;

/// Hook surface between the routing loop and an agent implementation.
///
/// Per hop the loop calls `decide`, applies the move, then reports the
/// reward via `reward`. A dead end (all-false mask) skips `decide` and
/// reports through `dead_end`, which learners fold into their pending
/// transition. `flow_end` closes every flow regardless of outcome.
pub trait RouteDriver {
    fn begin_episode(&mut self, env: &SimEnv) -> Result<()> {
        let _ = env;
        Ok(())
    }

    /// Masked agents never see an empty mask here.
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize>;

    fn reward(&mut self, ctx: &DecisionContext, action: usize, reward: f64, done: bool) -> Result<()> {
        let _ = (ctx, action, reward, done);
        Ok(())
    }

    fn dead_end(&mut self, penalty: f64) -> Result<()> {
        let _ = penalty;
        Ok(())
    }

    fn flow_end(&mut self) -> Result<()> {
        Ok(())
    }

    /// Whether the agent consumes the action mask (fault-unaware
    /// shortest-path baselines do not).
    fn needs_mask(&self) -> bool {
        true
    }
}

/// Result of routing one flow.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub success: bool,
    pub hops: usize,
    pub reward_total: f64,
    pub path: Vec<usize>,
}

/// Route one flow hop by hop until arrival, dead end, faulted traversal
/// (fault-unaware agents), or hop-budget exhaustion.
pub fn route_flow<D: RouteDriver + ?Sized>(
    env: &mut SimEnv,
    driver: &mut D,
    flow: &FlowRequest,
    reward_cfg: &RewardConfig,
) -> Result<FlowResult> {
    let dg = &env.world.domain_graph;
    let h_max = env.world.cfg.episode.max_hops;
    let dst = flow.dst_domain;
    let mut current = flow.src_domain;
    let mut hops = 0usize;
    let mut total = 0.0;
    let mut path = vec![current];

    let distances = hop_distances(dg, &env.faults, dst);
    loop {
        let mask = action_mask_with(dg, &env.faults, &distances, current, hops, h_max);
        let ctx = DecisionContext {
            dg,
            faults: &env.faults,
            node_feats: &env.node_feats,
            edge_feats: &env.edge_feats,
            mask: &mask,
            distances: &distances,
            current,
            dst,
            hops_taken: hops,
            h_max,
            t_step: env.t_step,
            steps_per_episode: env.steps_per_episode(),
            cv: env.cv_at_decision,
            surge: env.is_surge(),
            any_fault: env.any_fault(),
            graph_state_id: env.graph_state_id,
        };

        if driver.needs_mask() && mask.iter().all(|&m| !m) {
            let penalty = reward(None, None, hops, FlowOutcome::DeadEnd, reward_cfg);
            total += penalty;
            driver.dead_end(penalty)?;
            driver.flow_end()?;
            return Ok(FlowResult {
                success: false,
                hops,
                reward_total: total,
                path,
            });
        }

        let action = driver.decide(&ctx)?;
        debug_assert!(!driver.needs_mask() || mask[action], "masked agent broke the mask");
        let edge = dg
            .edge_index(current, action)
            .expect("agents choose adjacent domains");

        if env.faults.is_faulted(edge) {
            // Only fault-unaware agents can pick a down edge; the flow is
            // dropped at the failed traversal and the edge carries nothing.
            debug_assert!(!driver.needs_mask());
            driver.flow_end()?;
            return Ok(FlowResult {
                success: false,
                hops,
                reward_total: total,
                path,
            });
        }

        env.record_traversal(edge, flow.demand);
        hops += 1;
        path.push(action);
        let outcome = if action == dst {
            FlowOutcome::Arrived
        } else if hops >= h_max {
            FlowOutcome::Failed
        } else {
            FlowOutcome::Step
        };
        let r = reward(distances[current], distances[action], hops, outcome, reward_cfg);
        total += r;
        let done = outcome != FlowOutcome::Step;
        driver.reward(&ctx, action, r, done)?;
        if done {
            driver.flow_end()?;
            return Ok(FlowResult {
                success: outcome == FlowOutcome::Arrived,
                hops,
                reward_total: total,
                path,
            });
        }
        current = action;
    }
}

/// Run one full episode under the given scenario kind.
pub fn run_episode<D: RouteDriver + ?Sized>(
    world: &World,
    kind: ScenarioKind,
    master_seed: u64,
    episode_tag: u64,
    driver: &mut D,
    log_flows: bool,
) -> Result<EpisodeOutcome> {
    let mut env = SimEnv::new(world, kind, master_seed, episode_tag)?;
    if log_flows {
        env.enable_flow_log();
    }
    driver.begin_episode(&env)?;
    while !env.finished() {
        env.begin_step()?;
        let flows = env.take_flows();
        for flow in &flows {
            let result = route_flow(&mut env, driver, flow, &world.cfg.reward)?;
            env.record_flow(flow, result.success, result.hops, result.reward_total, result.path);
        }
        env.end_step();
    }
    Ok(env.into_outcome())
}
