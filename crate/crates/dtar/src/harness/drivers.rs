//! Bindings between agents and the routing loop: training drivers own their
//! learners and learning state; evaluation drivers act greedily on frozen
//! parameters and are cheap to construct per episode.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::env::SimEnv;
use super::episode::RouteDriver;
use crate::agents::{
    cdpar_observation, const_features, ppo_update, CdparAgent, DecisionContext, DijkstraAgent,
    DtarNet, ElbAgent, PpoConfig, PpoStats, QrlsnAgent, RolloutBuffer, Transition,
};
use crate::error::Result;
use crate::neural::{AdamState, GraphEdges};
use crate::rng::stream_rng;

/// Linear epsilon anneal over a decision horizon.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.horizon == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.horizon as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Shared per-step embedding cache.
#[derive(Default)]
struct EmbeddingCache {
    entry: Option<(usize, Array2<f64>)>,
}

impl EmbeddingCache {
    fn get_or_compute(
        &mut self,
        net: &DtarNet,
        edges: &GraphEdges,
        ctx: &DecisionContext,
    ) -> Result<Array2<f64>> {
        if let Some((key, emb)) = &self.entry {
            if *key == ctx.graph_state_id {
                return Ok(emb.clone());
            }
        }
        let emb = net.encode(ctx.node_feats, ctx.edge_feats, edges)?;
        self.entry = Some((ctx.graph_state_id, emb.clone()));
        Ok(emb)
    }
}

/// PPO learner driver: collects transitions across flow and episode
/// boundaries and updates once at least `n_steps` have accumulated,
/// always at a flow boundary so stored flows stay whole.
pub struct DtarTrainDriver {
    net: DtarNet,
    adam: AdamState,
    edges: GraphEdges,
    ppo: PpoConfig,
    buffer: RolloutBuffer,
    policy_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    cache: EmbeddingCache,
    pending: Option<(f64, f64)>, // (log_prob, value)
    pushed_this_flow: bool,
    pub decisions: u64,
    pub updates: u64,
    pub last_stats: Option<PpoStats>,
}

impl DtarTrainDriver {
    pub fn new(net: DtarNet, edges: GraphEdges, ppo: PpoConfig, seed: u64) -> Self {
        let adam = AdamState::new(&net.params);
        let capacity = ppo.n_steps + 32;
        DtarTrainDriver {
            net,
            adam,
            edges,
            buffer: RolloutBuffer::new(capacity),
            policy_rng: stream_rng(seed, 0x706f_6c69),
            update_rng: stream_rng(seed, 0x7570_6474),
            cache: EmbeddingCache::default(),
            pending: None,
            pushed_this_flow: false,
            decisions: 0,
            updates: 0,
            last_stats: None,
            ppo,
        }
    }

    pub fn net(&self) -> &DtarNet {
        &self.net
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn into_net(self) -> (DtarNet, AdamState) {
        (self.net, self.adam)
    }
}

impl RouteDriver for DtarTrainDriver {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        let emb = self.cache.get_or_compute(&self.net, &self.edges, ctx)?;
        let out = self.net.act(&emb, ctx, false, &mut self.policy_rng)?;
        self.pending = Some((out.log_prob, out.value));
        self.decisions += 1;
        Ok(out.action)
    }

    fn reward(&mut self, ctx: &DecisionContext, action: usize, reward: f64, done: bool) -> Result<()> {
        let (log_prob, value) = self.pending.take().expect("decide precedes reward");
        let graph_id =
            self.buffer
                .graph_state(ctx.graph_state_id, ctx.node_feats, ctx.edge_feats, &self.edges);
        self.buffer.push(Transition {
            graph_id,
            current: ctx.current,
            dst: ctx.dst,
            const_feats: const_features(ctx),
            mask: ctx.mask.to_vec(),
            action,
            reward,
            value,
            log_prob,
            done,
        });
        self.pushed_this_flow = true;
        Ok(())
    }

    fn dead_end(&mut self, penalty: f64) -> Result<()> {
        // Fold the dead-end penalty into the hop that led here; a flow with
        // no admissible first hop contributes nothing to learning.
        if self.pushed_this_flow {
            self.buffer.amend_last_terminal(penalty);
        }
        Ok(())
    }

    fn flow_end(&mut self) -> Result<()> {
        self.pushed_this_flow = false;
        if self.buffer.len() >= self.ppo.n_steps {
            let stats = ppo_update(
                &mut self.net,
                &self.buffer,
                &self.edges,
                &self.ppo,
                &mut self.adam,
                &mut self.update_rng,
            )?;
            self.buffer.clear();
            self.updates += 1;
            self.last_stats = Some(stats);
        }
        Ok(())
    }
}

/// Greedy evaluation driver for the PPO policy family.
pub struct DtarEvalDriver<'a> {
    net: &'a DtarNet,
    edges: &'a GraphEdges,
    cache: EmbeddingCache,
    rng: ChaCha8Rng,
}

impl<'a> DtarEvalDriver<'a> {
    pub fn new(net: &'a DtarNet, edges: &'a GraphEdges) -> Self {
        DtarEvalDriver {
            net,
            edges,
            cache: EmbeddingCache::default(),
            rng: stream_rng(0, 0),
        }
    }
}

impl RouteDriver for DtarEvalDriver<'_> {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        let emb = self.cache.get_or_compute(self.net, self.edges, ctx)?;
        Ok(self.net.act(&emb, ctx, true, &mut self.rng)?.action)
    }
}

/// Tabular Q-learning driver.
pub struct QrlsnTrainDriver {
    agent: QrlsnAgent,
    schedule: EpsilonSchedule,
    rng: ChaCha8Rng,
    pending: Option<(usize, usize, usize, f64)>, // (current, dst, action, reward)
    pub decisions: u64,
}

impl QrlsnTrainDriver {
    pub fn new(agent: QrlsnAgent, schedule: EpsilonSchedule, seed: u64) -> Self {
        QrlsnTrainDriver {
            agent,
            schedule,
            rng: stream_rng(seed, 0x7172_6c73),
            pending: None,
            decisions: 0,
        }
    }

    pub fn agent(&self) -> &QrlsnAgent {
        &self.agent
    }

    pub fn into_agent(self) -> QrlsnAgent {
        self.agent
    }
}

impl RouteDriver for QrlsnTrainDriver {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        if let Some((c, d, a, r)) = self.pending.take() {
            self.agent.learn(c, d, a, r, ctx.current, Some(ctx.mask), false);
        }
        let eps = self.schedule.at(self.decisions);
        self.decisions += 1;
        self.agent.act(ctx.current, ctx.dst, ctx.mask, eps, &mut self.rng)
    }

    fn reward(&mut self, ctx: &DecisionContext, action: usize, reward: f64, done: bool) -> Result<()> {
        if done {
            self.agent.learn(ctx.current, ctx.dst, action, reward, 0, None, true);
        } else {
            self.pending = Some((ctx.current, ctx.dst, action, reward));
        }
        Ok(())
    }

    fn dead_end(&mut self, penalty: f64) -> Result<()> {
        if let Some((c, d, a, r)) = self.pending.take() {
            self.agent.learn(c, d, a, r + penalty, 0, None, true);
        }
        Ok(())
    }

    fn flow_end(&mut self) -> Result<()> {
        debug_assert!(self.pending.is_none());
        Ok(())
    }
}

pub struct QrlsnEvalDriver<'a> {
    agent: &'a QrlsnAgent,
}

impl<'a> QrlsnEvalDriver<'a> {
    pub fn new(agent: &'a QrlsnAgent) -> Self {
        QrlsnEvalDriver { agent }
    }
}

impl RouteDriver for QrlsnEvalDriver<'_> {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        self.agent.greedy(ctx.current, ctx.dst, ctx.mask)
    }
}

/// DQN driver.
pub struct CdparTrainDriver {
    agent: CdparAgent,
    schedule: EpsilonSchedule,
    rng: ChaCha8Rng,
    pending: Option<(Vec<f64>, usize, f64)>, // (obs, action, reward)
    pub decisions: u64,
}

impl CdparTrainDriver {
    pub fn new(agent: CdparAgent, schedule: EpsilonSchedule, seed: u64) -> Self {
        CdparTrainDriver {
            agent,
            schedule,
            rng: stream_rng(seed, 0x6364_7061),
            pending: None,
            decisions: 0,
        }
    }

    pub fn agent(&self) -> &CdparAgent {
        &self.agent
    }

    pub fn into_agent(self) -> CdparAgent {
        self.agent
    }

    fn terminal_learn(&mut self, obs: Vec<f64>, action: usize, reward: f64) -> Result<()> {
        // Terminal transitions never read the next state.
        let dummy_obs = vec![0.0; self.agent.obs_dim()];
        let dummy_mask = vec![false; self.agent.num_actions()];
        self.agent
            .remember_and_learn(obs, action, reward, dummy_obs, dummy_mask, true, &mut self.rng)
            .map(|_| ())
    }
}

impl RouteDriver for CdparTrainDriver {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        let obs = cdpar_observation(ctx);
        if let Some((prev_obs, a, r)) = self.pending.take() {
            self.agent.remember_and_learn(
                prev_obs,
                a,
                r,
                obs.clone(),
                ctx.mask.to_vec(),
                false,
                &mut self.rng,
            )?;
        }
        let eps = self.schedule.at(self.decisions);
        self.decisions += 1;
        self.agent.act(&obs, ctx.mask, eps, &mut self.rng)
    }

    fn reward(&mut self, ctx: &DecisionContext, action: usize, reward: f64, done: bool) -> Result<()> {
        let obs = cdpar_observation(ctx);
        if done {
            self.terminal_learn(obs, action, reward)
        } else {
            self.pending = Some((obs, action, reward));
            Ok(())
        }
    }

    fn dead_end(&mut self, penalty: f64) -> Result<()> {
        if let Some((obs, a, r)) = self.pending.take() {
            self.terminal_learn(obs, a, r + penalty)?;
        }
        Ok(())
    }

    fn flow_end(&mut self) -> Result<()> {
        debug_assert!(self.pending.is_none());
        Ok(())
    }
}

pub struct CdparEvalDriver<'a> {
    agent: &'a CdparAgent,
}

impl<'a> CdparEvalDriver<'a> {
    pub fn new(agent: &'a CdparAgent) -> Self {
        CdparEvalDriver { agent }
    }
}

impl RouteDriver for CdparEvalDriver<'_> {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        if !ctx.mask.iter().any(|&m| m) {
            return Err(crate::error::Error::EmptyMask);
        }
        Ok(self.agent.greedy(&cdpar_observation(ctx), ctx.mask))
    }
}

/// Hop-count shortest path, fault-unaware.
pub struct DijkstraDriver {
    agent: DijkstraAgent,
}

impl DijkstraDriver {
    pub fn new(dg: &crate::domain::DomainGraph) -> Self {
        DijkstraDriver {
            agent: DijkstraAgent::new(dg),
        }
    }
}

impl RouteDriver for DijkstraDriver {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        Ok(self.agent.next_hop(ctx.dg, ctx.current, ctx.dst))
    }

    fn needs_mask(&self) -> bool {
        false
    }
}

/// Load-weighted shortest path on the episode-start snapshot.
#[derive(Default)]
pub struct ElbDriver {
    agent: Option<ElbAgent>,
}

impl ElbDriver {
    pub fn new() -> Self {
        ElbDriver { agent: None }
    }
}

impl RouteDriver for ElbDriver {
    fn begin_episode(&mut self, env: &SimEnv) -> Result<()> {
        self.agent = Some(ElbAgent::new(&env.world.domain_graph, &env.loads));
        Ok(())
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<usize> {
        let agent = self.agent.as_ref().expect("begin_episode builds the snapshot");
        Ok(agent.next_hop(ctx.dg, ctx.current, ctx.dst))
    }

    fn needs_mask(&self) -> bool {
        false
    }
}
