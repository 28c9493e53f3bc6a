//! Routing agents: the GAT-PPO policy with action masking, its two ablation
//! variants, and the four baselines (hop-count shortest path, load-weighted
//! shortest path, tabular Q-learning, partition-aware DQN).

mod cdpar;
mod dtar;
mod observation;
mod ppo;
mod qrlsn;
mod reward;
mod shortest_path;

pub use cdpar::{CdparAgent, DqnConfig};
pub use dtar::{DtarNet, EncoderKind};
pub use observation::{build_observation, cdpar_observation, const_features, obs_dim, CDPAR_STATIC_DIM};
pub use ppo::{gae, ppo_update, PpoConfig, PpoStats, RolloutBuffer, Transition};
pub use qrlsn::QrlsnAgent;
pub use reward::{reward, FlowOutcome, RewardConfig};
pub use shortest_path::{DijkstraAgent, ElbAgent};

use serde::{Deserialize, Serialize};

use crate::domain::DomainGraph;
use crate::error::Error;
use crate::faults::FaultState;
use ndarray::Array2;

/// Every evaluated routing method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Dtar,
    DtarMlp,
    DtarRandpart,
    Dijkstra,
    Elb,
    Qrlsn,
    Cdpar,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::Dtar,
        AgentKind::DtarMlp,
        AgentKind::DtarRandpart,
        AgentKind::Dijkstra,
        AgentKind::Elb,
        AgentKind::Qrlsn,
        AgentKind::Cdpar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Dtar => "dtar",
            AgentKind::DtarMlp => "dtar-mlp",
            AgentKind::DtarRandpart => "dtar-randpart",
            AgentKind::Dijkstra => "dijkstra",
            AgentKind::Elb => "elb",
            AgentKind::Qrlsn => "qrlsn",
            AgentKind::Cdpar => "cdpar",
        }
    }

    /// Whether `train` applies to this agent.
    pub fn trainable(&self) -> bool {
        !matches!(self, AgentKind::Dijkstra | AgentKind::Elb)
    }

    /// Whether the agent routes on the uniform orbital partition instead of
    /// the optimized one.
    pub fn uses_uniform_partition(&self) -> bool {
        matches!(self, AgentKind::DtarRandpart)
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dtar" => Ok(AgentKind::Dtar),
            "dtar-mlp" => Ok(AgentKind::DtarMlp),
            "dtar-randpart" => Ok(AgentKind::DtarRandpart),
            "dijkstra" => Ok(AgentKind::Dijkstra),
            "elb" => Ok(AgentKind::Elb),
            "qrlsn" => Ok(AgentKind::Qrlsn),
            "cdpar" => Ok(AgentKind::Cdpar),
            other => Err(Error::InvalidConfig(format!("unknown agent `{}`", other))),
        }
    }
}

/// Everything an agent may inspect when choosing the next hop. The harness
/// builds one per decision; feature matrices are shared per environment step.
pub struct DecisionContext<'a> {
    pub dg: &'a DomainGraph,
    pub faults: &'a FaultState,
    /// K x 6 node features for the current step.
    pub node_feats: &'a Array2<f64>,
    /// Undirected E x 3 edge features for the current step.
    pub edge_feats: &'a Array2<f64>,
    /// Feasible next hops.
    pub mask: &'a [bool],
    /// Operational hop distances to the flow destination.
    pub distances: &'a [Option<u32>],
    pub current: usize,
    pub dst: usize,
    pub hops_taken: usize,
    pub h_max: usize,
    pub t_step: usize,
    pub steps_per_episode: usize,
    pub cv: f64,
    pub surge: bool,
    pub any_fault: bool,
    /// Monotone id of the environment step; embeddings are cached per id.
    pub graph_state_id: usize,
}
