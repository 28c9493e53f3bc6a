//! Paired greedy evaluation across agents and scenarios.
//!
//! Every agent replays the same per-(scenario, episode) environment seed, so
//! traffic, hotspots, and fault draws are identical across agents sharing a
//! partition; trace hashes verify the pairing. Episode fan-out is
//! data-parallel with deterministically derived sub-seeds and
//! order-independent aggregation.

use super::drivers::{CdparEvalDriver, DijkstraDriver, DtarEvalDriver, ElbDriver, QrlsnEvalDriver};
use super::env::{EpisodeOutcome, ScenarioKind, World};
use super::episode::{run_episode, RouteDriver};
use super::metrics::MetricsRecord;
use super::train::LoadedAgent;
use crate::agents::AgentKind;
use crate::error::{Error, Result};

/// One agent prepared for evaluation, bound to the world it routes on.
pub struct EvalAgent<'w> {
    pub kind: AgentKind,
    pub world: &'w World,
    pub loaded: LoadedAgent,
}

/// Full evaluation output: summary records plus per-episode outcomes for
/// trace inspection.
pub struct EvalReport {
    pub records: Vec<MetricsRecord>,
    pub outcomes: Vec<(AgentKind, ScenarioKind, Vec<EpisodeOutcome>)>,
}

fn make_driver<'a>(world: &'a World, loaded: &'a LoadedAgent) -> Box<dyn RouteDriver + 'a> {
    match loaded {
        LoadedAgent::Policy(net) => Box::new(DtarEvalDriver::new(net, &world.encoder_edges)),
        LoadedAgent::Qrlsn(agent) => Box::new(QrlsnEvalDriver::new(agent)),
        LoadedAgent::Cdpar(agent) => Box::new(CdparEvalDriver::new(agent)),
        LoadedAgent::Dijkstra => Box::new(DijkstraDriver::new(&world.domain_graph)),
        LoadedAgent::Elb => Box::new(ElbDriver::new()),
    }
}

fn run_one(
    world: &World,
    loaded: &LoadedAgent,
    kind: ScenarioKind,
    seed: u64,
    tag: u64,
    log_flows: bool,
) -> Result<EpisodeOutcome> {
    let mut driver = make_driver(world, loaded);
    run_episode(world, kind, seed, tag, driver.as_mut(), log_flows)
}

/// Sequential episode batch.
pub fn eval_episodes_seq(
    world: &World,
    loaded: &LoadedAgent,
    kind: ScenarioKind,
    episodes: usize,
    seed: u64,
    log_flows: bool,
) -> Result<Vec<EpisodeOutcome>> {
    (0..episodes as u64)
        .map(|tag| run_one(world, loaded, kind, seed, tag, log_flows))
        .collect()
}

/// Rayon episode batch; outcomes come back in episode order, so results are
/// identical to the sequential path.
#[cfg(feature = "parallel")]
pub fn eval_episodes_par(
    world: &World,
    loaded: &LoadedAgent,
    kind: ScenarioKind,
    episodes: usize,
    seed: u64,
    log_flows: bool,
) -> Result<Vec<EpisodeOutcome>> {
    use rayon::prelude::*;
    (0..episodes as u64)
        .into_par_iter()
        .map(|tag| run_one(world, loaded, kind, seed, tag, log_flows))
        .collect()
}

fn eval_episodes(
    world: &World,
    loaded: &LoadedAgent,
    kind: ScenarioKind,
    episodes: usize,
    seed: u64,
    log_flows: bool,
) -> Result<Vec<EpisodeOutcome>> {
    #[cfg(feature = "parallel")]
    {
        eval_episodes_par(world, loaded, kind, episodes, seed, log_flows)
    }
    #[cfg(not(feature = "parallel"))]
    {
        eval_episodes_seq(world, loaded, kind, episodes, seed, log_flows)
    }
}

/// Evaluate every agent over every scenario with paired seeds.
pub fn evaluate(
    agents: &[EvalAgent],
    episodes_per_scenario: usize,
    seed: u64,
    log_flows: bool,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    for agent in agents {
        for kind in ScenarioKind::ALL {
            let eps = eval_episodes(
                agent.world,
                &agent.loaded,
                kind,
                episodes_per_scenario,
                seed,
                log_flows,
            )?;
            records.push(MetricsRecord::aggregate(
                agent.kind.name(),
                kind.name(),
                &eps,
                agent.world.per_hop_delay_ms,
            ));
            outcomes.push((agent.kind, kind, eps));
        }
    }

    verify_pairing(agents, &outcomes)?;
    Ok(EvalReport { records, outcomes })
}

/// Agents routing on the same world must observe byte-identical environment
/// draws in every paired episode.
fn verify_pairing(
    agents: &[EvalAgent],
    outcomes: &[(AgentKind, ScenarioKind, Vec<EpisodeOutcome>)],
) -> Result<()> {
    for (i, a) in agents.iter().enumerate() {
        for (j, b) in agents.iter().enumerate().skip(i + 1) {
            if !std::ptr::eq(a.world, b.world) {
                continue;
            }
            for kind in ScenarioKind::ALL {
                let find = |idx: usize, k: AgentKind| {
                    outcomes
                        .iter()
                        .find(|(ak, sk, _)| *ak == k && *sk == kind)
                        .map(|(_, _, eps)| eps)
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("missing outcomes for agent {}", idx))
                        })
                };
                let eps_a = find(i, a.kind)?;
                let eps_b = find(j, b.kind)?;
                for (e, (oa, ob)) in eps_a.iter().zip(eps_b.iter()).enumerate() {
                    if oa.trace_hash != ob.trace_hash {
                        return Err(Error::InvalidConfig(format!(
                            "paired evaluation broken: {} vs {} diverge in {} episode {}",
                            a.kind, b.kind, kind.name(), e
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
