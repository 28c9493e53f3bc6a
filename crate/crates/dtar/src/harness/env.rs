//! The per-episode environment: scenario state, traffic, faults, link
//! loads, features, and the flow sampler.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use crate::constellation::{build_walker, ground_track, per_hop_delay_ms, GroundTrack, SatGraph};
use crate::domain::{
    build_domain_graph, cv, edge_features, node_features, update_link_loads, DomainGraph,
    LinkLoadState,
};
use crate::error::{Error, Result};
use crate::faults::{step_faults, FaultEvent, FaultState};
use crate::neural::GraphEdges;
use crate::partition::DomainPartition;
use crate::rng::{stream_rng2, TraceHash};
use crate::traffic::{
    apply_surge, generate_traffic, select_hotspot, SurgeHotspot, TrafficMatrix,
};

/// Which evaluation condition an episode runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Normal,
    Surge,
    Fault,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::Normal, ScenarioKind::Surge, ScenarioKind::Fault];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Normal => "normal",
            ScenarioKind::Surge => "surge",
            ScenarioKind::Fault => "fault",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ScenarioKind::Normal => 0,
            ScenarioKind::Surge => 1,
            ScenarioKind::Fault => 2,
        }
    }

    /// Sample a scenario from the configured mix.
    pub fn sample(weights: &[f64; 3], rng: &mut ChaCha8Rng) -> ScenarioKind {
        let u: f64 = rng.gen();
        if u < weights[0] {
            ScenarioKind::Normal
        } else if u < weights[0] + weights[1] {
            ScenarioKind::Surge
        } else {
            ScenarioKind::Fault
        }
    }
}

/// Per-episode scenario instance; surge carries its sampled hotspot.
#[derive(Debug, Clone)]
pub enum Scenario {
    Normal,
    Surge(SurgeHotspot),
    Fault,
}

impl Scenario {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Scenario::Normal => ScenarioKind::Normal,
            Scenario::Surge(_) => ScenarioKind::Surge,
            Scenario::Fault => ScenarioKind::Fault,
        }
    }

    pub fn hotspot(&self) -> Option<&SurgeHotspot> {
        match self {
            Scenario::Surge(h) => Some(h),
            _ => None,
        }
    }
}

/// One cross-domain routing request.
#[derive(Debug, Clone)]
pub struct FlowRequest {
    pub src_sat: usize,
    pub dst_sat: usize,
    pub src_domain: usize,
    pub dst_domain: usize,
    pub demand: f64,
}

/// Sample `count` source/destination pairs proportional to the matrix,
/// restricted to cross-domain pairs. Demand is the entry normalized by the
/// mean positive entry of the whole matrix.
pub fn sample_flows(
    t: &TrafficMatrix,
    part: &DomainPartition,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlowRequest>> {
    let n = t.num_nodes();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut cross_mass = 0.0;
    let mut positive_sum = 0.0;
    let mut positive_count = 0usize;
    for i in 0..n {
        for j in 0..n {
            let v = t.get(i, j);
            if v > 0.0 {
                positive_sum += v;
                positive_count += 1;
                if part.label(i) != part.label(j) {
                    cross_mass += v;
                    entries.push((i, j, cross_mass));
                }
            }
        }
    }
    if cross_mass <= 0.0 {
        return Err(Error::ZeroTraffic);
    }
    let mean_positive = positive_sum / positive_count as f64;
    let mut flows = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>() * cross_mass;
        let idx = entries.partition_point(|&(_, _, acc)| acc <= u);
        let (i, j, _) = entries[idx.min(entries.len() - 1)];
        flows.push(FlowRequest {
            src_sat: i,
            dst_sat: j,
            src_domain: part.label(i),
            dst_domain: part.label(j),
            demand: t.get(i, j) / mean_positive,
        });
    }
    Ok(flows)
}

/// Time-averaged traffic matrix over one simulated day; the partitioner
/// input, since the offline partition must serve every hour.
pub fn day_average_traffic(cfg: &SimConfig, g: &SatGraph, seed: u64) -> TrafficMatrix {
    let mut rng = stream_rng2(seed, 0x7472_6166, 0);
    let steps = cfg.episode.steps_per_episode;
    let mats: Vec<TrafficMatrix> = (0..steps)
        .map(|t| {
            let tracks = ground_track(g, &cfg.constellation, t, cfg.episode.step_seconds);
            generate_traffic(&cfg.traffic, &tracks, t, cfg.episode.step_seconds, &mut rng)
        })
        .collect();
    TrafficMatrix::mean_of(&mats)
}

/// Immutable per-run structures shared by every episode.
pub struct World {
    pub cfg: SimConfig,
    pub sat_graph: SatGraph,
    pub partition: DomainPartition,
    pub domain_graph: DomainGraph,
    /// Directed attention edges with self-loops.
    pub encoder_edges: GraphEdges,
    pub per_hop_delay_ms: f64,
    /// Ground tracks per step (episodes start at the same epoch).
    tracks: Vec<GroundTrack>,
}

impl World {
    pub fn new(cfg: SimConfig, partition: DomainPartition) -> Result<Self> {
        cfg.validate()?;
        let sat_graph = build_walker(&cfg.constellation)?;
        if partition.num_nodes() != sat_graph.num_nodes() {
            return Err(Error::InvalidConfig(format!(
                "partition covers {} nodes, constellation has {}",
                partition.num_nodes(),
                sat_graph.num_nodes()
            )));
        }
        if partition.num_domains() != cfg.partition.domains {
            return Err(Error::InvalidConfig(format!(
                "partition has {} domains, config expects {}",
                partition.num_domains(),
                cfg.partition.domains
            )));
        }
        let domain_graph = build_domain_graph(&partition, &sat_graph)?;
        let plain: Vec<(usize, usize)> = domain_graph.edges().iter().map(|e| (e.a, e.b)).collect();
        let encoder_edges = GraphEdges::from_undirected(domain_graph.num_domains(), &plain);
        let tracks = (0..cfg.episode.steps_per_episode)
            .map(|t| ground_track(&sat_graph, &cfg.constellation, t, cfg.episode.step_seconds))
            .collect();
        let per_hop = per_hop_delay_ms(&cfg.constellation);
        Ok(World {
            cfg,
            sat_graph,
            partition,
            domain_graph,
            encoder_edges,
            per_hop_delay_ms: per_hop,
            tracks,
        })
    }

    /// World on the plane-major uniform partition (the ablation baseline).
    pub fn with_uniform_partition(cfg: SimConfig) -> Result<Self> {
        let n = cfg.constellation.num_sats();
        let part = DomainPartition::uniform_plane_major(n, cfg.partition.domains);
        World::new(cfg, part)
    }

    pub fn num_domains(&self) -> usize {
        self.domain_graph.num_domains()
    }
}

/// Mutable episode state.
pub struct SimEnv<'w> {
    pub world: &'w World,
    pub scenario: Scenario,
    rng: ChaCha8Rng,
    pub t_step: usize,
    pub faults: FaultState,
    pub loads: LinkLoadState,
    pub traffic: TrafficMatrix,
    pub node_feats: Array2<f64>,
    pub edge_feats: Array2<f64>,
    /// CV of the load state the current step's decisions observe.
    pub cv_at_decision: f64,
    pub graph_state_id: usize,
    flows: Vec<FlowRequest>,
    routed: Vec<(usize, f64)>,
    trace: TraceHash,
    fault_events: Vec<(usize, FaultEvent)>,
    // Episode accumulators.
    requests: usize,
    successes: usize,
    success_hops: usize,
    cv_sum: f64,
    flow_rewards: Vec<f64>,
    flow_log: Vec<FlowLogEntry>,
    log_flows: bool,
}

/// Trace record of one routed flow.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FlowLogEntry {
    pub step: usize,
    pub src: usize,
    pub dst: usize,
    pub path: Vec<usize>,
    pub success: bool,
}

/// Episode summary returned to the training and evaluation loops.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub requests: usize,
    pub successes: usize,
    pub success_hops: usize,
    pub mean_cv: f64,
    pub flow_rewards: Vec<f64>,
    pub trace_hash: u64,
    pub fault_events: Vec<(usize, FaultEvent)>,
    pub flow_log: Vec<FlowLogEntry>,
}

impl EpisodeOutcome {
    pub fn sr(&self) -> f64 {
        if self.requests == 0 {
            1.0
        } else {
            self.successes as f64 / self.requests as f64
        }
    }
}

impl<'w> SimEnv<'w> {
    /// Environment rng streams derive from (seed, scenario, episode) only,
    /// never from the agent, so paired evaluation sees identical draws.
    pub fn new(
        world: &'w World,
        kind: ScenarioKind,
        master_seed: u64,
        episode_tag: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng2(master_seed, kind.index() as u64 + 1, episode_tag);
        let mut trace = TraceHash::new();
        let scenario = match kind {
            ScenarioKind::Normal => Scenario::Normal,
            ScenarioKind::Surge => {
                let hotspot = select_hotspot(&world.domain_graph, &world.partition, &mut rng)?;
                trace.mix_u64(hotspot.edge_index as u64);
                Scenario::Surge(hotspot)
            }
            ScenarioKind::Fault => Scenario::Fault,
        };
        let edges = world.domain_graph.num_edges();
        Ok(SimEnv {
            world,
            scenario,
            rng,
            t_step: 0,
            faults: FaultState::all_healthy(edges),
            loads: LinkLoadState::zeros(edges),
            traffic: TrafficMatrix::zeros(world.sat_graph.num_nodes()),
            node_feats: Array2::zeros((world.num_domains(), 6)),
            edge_feats: Array2::zeros((edges, 3)),
            cv_at_decision: 0.0,
            graph_state_id: 0,
            flows: Vec::new(),
            routed: Vec::new(),
            trace,
            fault_events: Vec::new(),
            requests: 0,
            successes: 0,
            success_hops: 0,
            cv_sum: 0.0,
            flow_rewards: Vec::new(),
            flow_log: Vec::new(),
            log_flows: false,
        })
    }

    pub fn enable_flow_log(&mut self) {
        self.log_flows = true;
    }

    pub fn steps_per_episode(&self) -> usize {
        self.world.cfg.episode.steps_per_episode
    }

    pub fn finished(&self) -> bool {
        self.t_step >= self.steps_per_episode()
    }

    /// Advance ground tracks, generate (and surge) traffic, step the fault
    /// process, and sample this step's flows.
    pub fn begin_step(&mut self) -> Result<()> {
        debug_assert!(!self.finished());
        let cfg = &self.world.cfg;
        let tracks = &self.world.tracks[self.t_step];
        let mut t = generate_traffic(
            &cfg.traffic,
            tracks,
            self.t_step,
            cfg.episode.step_seconds,
            &mut self.rng,
        );
        if let Scenario::Surge(hotspot) = &self.scenario {
            t = apply_surge(&t, hotspot, cfg.traffic.surge_multiplier);
        }
        self.traffic = t;

        if matches!(self.scenario, Scenario::Fault) {
            let (next, events) =
                step_faults(&self.faults, &cfg.faults, &self.world.domain_graph, &mut self.rng);
            self.faults = next;
            for e in events {
                self.fault_events.push((self.t_step, e));
            }
        }

        self.flows = sample_flows(
            &self.traffic,
            &self.world.partition,
            cfg.episode.flows_per_step,
            &mut self.rng,
        )?;

        self.node_feats = node_features(
            &self.world.domain_graph,
            &self.faults,
            self.scenario.hotspot(),
            &self.traffic,
            &self.world.partition,
        );
        self.edge_feats = edge_features(&self.world.domain_graph, &self.loads, &self.faults);
        self.cv_at_decision = cv(&self.loads);

        // Trace: traffic, fault state, sampled flows.
        for v in self.traffic.as_array().iter() {
            self.trace.mix_f64(*v);
        }
        for e in 0..self.faults.num_edges() {
            self.trace.mix_u64(self.faults.is_faulted(e) as u64);
        }
        for f in &self.flows {
            self.trace.mix_u64(f.src_sat as u64);
            self.trace.mix_u64(f.dst_sat as u64);
            self.trace.mix_f64(f.demand);
        }
        Ok(())
    }

    pub fn take_flows(&mut self) -> Vec<FlowRequest> {
        std::mem::take(&mut self.flows)
    }

    pub fn record_traversal(&mut self, edge: usize, demand: f64) {
        self.routed.push((edge, demand));
    }

    pub fn record_flow(
        &mut self,
        flow: &FlowRequest,
        success: bool,
        hops: usize,
        reward_total: f64,
        path: Vec<usize>,
    ) {
        self.requests += 1;
        if success {
            self.successes += 1;
            self.success_hops += hops;
        }
        self.flow_rewards.push(reward_total);
        if self.log_flows {
            self.flow_log.push(FlowLogEntry {
                step: self.t_step,
                src: flow.src_domain,
                dst: flow.dst_domain,
                path,
                success,
            });
        }
    }

    /// Apply the EWMA load update and record the post-update CV.
    pub fn end_step(&mut self) {
        let routed = std::mem::take(&mut self.routed);
        self.loads = update_link_loads(&self.loads, &routed, self.world.cfg.episode.ewma_rho);
        self.cv_sum += cv(&self.loads);
        self.t_step += 1;
        self.graph_state_id += 1;
    }

    pub fn any_fault(&self) -> bool {
        self.faults.any_fault()
    }

    pub fn is_surge(&self) -> bool {
        matches!(self.scenario, Scenario::Surge(_))
    }

    pub fn into_outcome(self) -> EpisodeOutcome {
        let steps = self.t_step.max(1);
        EpisodeOutcome {
            requests: self.requests,
            successes: self.successes,
            success_hops: self.success_hops,
            mean_cv: self.cv_sum / steps as f64,
            flow_rewards: self.flow_rewards,
            trace_hash: self.trace.value(),
            fault_events: self.fault_events,
            flow_log: self.flow_log,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn micro_config() -> SimConfig {
        let mut cfg = SimConfig::desk();
        cfg.constellation.num_planes = 3;
        cfg.constellation.sats_per_plane = 4;
        cfg.partition.domains = 3;
        cfg.episode.steps_per_episode = 12;
        cfg
    }

    #[test]
    fn flow_sampler_restricts_to_cross_domain() {
        let cfg = micro_config();
        let world = World::with_uniform_partition(cfg).unwrap();
        let mut env = SimEnv::new(&world, ScenarioKind::Normal, 3, 0).unwrap();
        env.begin_step().unwrap();
        let flows = env.take_flows();
        assert_eq!(flows.len(), 3);
        for f in &flows {
            assert_ne!(f.src_domain, f.dst_domain);
            assert_eq!(world.partition.label(f.src_sat), f.src_domain);
            assert_eq!(world.partition.label(f.dst_sat), f.dst_domain);
            assert!(f.demand > 0.0);
        }
    }

    #[test]
    fn concentrated_matrix_always_samples_that_pair() {
        let part = DomainPartition::uniform_plane_major(6, 2);
        let mut t = TrafficMatrix::zeros(6);
        t.set(1, 4, 3.0); // cross-domain
        t.set(0, 1, 5.0); // intra-domain, excluded
        let mut rng = stream_rng(4, 4);
        for _ in 0..50 {
            let flows = sample_flows(&t, &part, 2, &mut rng).unwrap();
            for f in flows {
                assert_eq!((f.src_sat, f.dst_sat), (1, 4));
                // demand = value / mean positive entry = 3 / 4.
                assert!((f.demand - 0.75).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampler_frequencies_track_matrix_mass() {
        let part = DomainPartition::uniform_plane_major(4, 2);
        let mut t = TrafficMatrix::zeros(4);
        t.set(0, 2, 1.0);
        t.set(0, 3, 3.0);
        t.set(1, 2, 4.0);
        let mut rng = stream_rng(5, 5);
        let mut counts = std::collections::BTreeMap::new();
        let draws = 100_000;
        let flows = sample_flows(&t, &part, draws, &mut rng).unwrap();
        for f in flows {
            *counts.entry((f.src_sat, f.dst_sat)).or_insert(0usize) += 1;
        }
        let expect = [(0, 2, 1.0 / 8.0), (0, 3, 3.0 / 8.0), (1, 2, 4.0 / 8.0)];
        for (i, j, p) in expect {
            let f = counts[&(i, j)] as f64 / draws as f64;
            assert!((f - p).abs() < 0.02, "pair ({},{}) freq {} expect {}", i, j, f, p);
        }
    }

    #[test]
    fn zero_cross_domain_mass_is_an_error() {
        let part = DomainPartition::uniform_plane_major(4, 2);
        let mut t = TrafficMatrix::zeros(4);
        t.set(0, 1, 5.0);
        let mut rng = stream_rng(6, 6);
        assert!(sample_flows(&t, &part, 1, &mut rng).is_err());
    }

    #[test]
    fn normal_scenario_never_faults() {
        let world = World::with_uniform_partition(micro_config()).unwrap();
        let mut env = SimEnv::new(&world, ScenarioKind::Normal, 9, 1).unwrap();
        while !env.finished() {
            env.begin_step().unwrap();
            assert!(!env.any_fault());
            env.take_flows();
            env.end_step();
        }
        let out = env.into_outcome();
        assert!(out.fault_events.is_empty());
    }

    #[test]
    fn env_stream_is_agent_independent_and_deterministic() {
        let world = World::with_uniform_partition(micro_config()).unwrap();
        let run = || {
            let mut env = SimEnv::new(&world, ScenarioKind::Fault, 11, 4).unwrap();
            while !env.finished() {
                env.begin_step().unwrap();
                env.take_flows();
                env.end_step();
            }
            env.into_outcome().trace_hash
        };
        assert_eq!(run(), run());
        let mut env = SimEnv::new(&world, ScenarioKind::Fault, 11, 5).unwrap();
        env.begin_step().unwrap();
        env.take_flows();
        env.end_step();
        // Different episode tag gives a different stream.
        let mut env2 = SimEnv::new(&world, ScenarioKind::Fault, 11, 4).unwrap();
        env2.begin_step().unwrap();
        env2.take_flows();
        env2.end_step();
        // Not a strict requirement per-step, but the full-episode hashes differ.
        assert_ne!(run(), {
            while !env.finished() {
                env.begin_step().unwrap();
                env.take_flows();
                env.end_step();
            }
            env.into_outcome().trace_hash
        });
    }

    #[test]
    fn scenario_mix_sampling_is_weighted() {
        let mut rng = stream_rng(12, 12);
        let weights = [0.5, 0.25, 0.25];
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[ScenarioKind::sample(&weights, &mut rng).index()] += 1;
        }
        assert!((counts[0] as f64 / 10_000.0 - 0.5).abs() < 0.02);
        assert!((counts[1] as f64 / 10_000.0 - 0.25).abs() < 0.02);
        assert!((counts[2] as f64 / 10_000.0 - 0.25).abs() < 0.02);
    }
}
