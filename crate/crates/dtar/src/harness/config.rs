//! Run configuration: one TOML file covering every subsystem, with desk- and
//! paper-scale profiles. The effective config is echoed into the output
//! directory of every run.

use serde::{Deserialize, Serialize};

use crate::agents::{DqnConfig, PpoConfig, RewardConfig};
use crate::constellation::ConstellationConfig;
use crate::error::{Error, Result};
use crate::faults::FaultConfig;
use crate::partition::Nsga2Config;
use crate::traffic::TrafficConfig;

/// Domain count plus the NSGA-II knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSection {
    pub domains: usize,
    #[serde(flatten)]
    pub nsga2: Nsga2Config,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            domains: 6,
            nsga2: Nsga2Config::default(),
        }
    }
}

/// Episode shape and environment cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSection {
    pub steps_per_episode: usize,
    pub flows_per_step: usize,
    pub max_hops: usize,
    /// Wall-clock seconds represented by one step.
    pub step_seconds: f64,
    /// Link-load EWMA decay factor.
    pub ewma_rho: f64,
    /// Sampling weights for (normal, surge, fault) during training.
    pub scenario_weights: [f64; 3],
}

impl Default for EpisodeSection {
    fn default() -> Self {
        EpisodeSection {
            steps_per_episode: 144,
            flows_per_step: 3,
            max_hops: 9,
            step_seconds: 600.0,
            ewma_rho: 0.9,
            scenario_weights: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

/// Training loop shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub total_timesteps: u64,
    pub checkpoint_every: u64,
    /// Reward-curve emission cadence, in decisions.
    pub curve_every: u64,
    /// Epsilon-greedy anneal for the Q-learning baselines.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            total_timesteps: 200_000,
            checkpoint_every: 100_000,
            curve_every: 2048,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub episodes_per_scenario: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes_per_scenario: 100,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub constellation: ConstellationConfig,
    pub traffic: TrafficConfig,
    pub partition: PartitionSection,
    pub faults: FaultConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub dqn: DqnConfig,
    pub episode: EpisodeSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl SimConfig {
    /// Desk-scale defaults: 48 satellites, 6 domains, 2e5 training steps.
    pub fn desk() -> Self {
        SimConfig::default()
    }

    /// Paper-scale profile: 288 satellites, 18 domains, 2.5e6 steps.
    pub fn paper_scale() -> Self {
        let mut cfg = SimConfig::default();
        cfg.constellation.num_planes = 12;
        cfg.constellation.sats_per_plane = 24;
        cfg.partition.domains = 18;
        cfg.train.total_timesteps = 2_500_000;
        cfg
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let cfg: SimConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.traffic.validate()?;
        self.faults.validate()?;
        let n = self.constellation.num_sats();
        let k = self.partition.domains;
        if k < 2 {
            return Err(Error::InvalidConfig(
                "at least two domains are required for inter-domain routing".into(),
            ));
        }
        if k > n {
            return Err(Error::InvalidConfig(format!(
                "{} domains cannot partition {} satellites",
                k, n
            )));
        }
        self.partition.nsga2.validate(n, k)?;
        let ep = &self.episode;
        if ep.steps_per_episode == 0 || ep.flows_per_step == 0 || ep.max_hops == 0 {
            return Err(Error::InvalidConfig("episode counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&ep.ewma_rho) {
            return Err(Error::InvalidConfig("ewma_rho must lie in [0, 1)".into()));
        }
        let wsum: f64 = ep.scenario_weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-6 || ep.scenario_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig(
                "scenario weights must be non-negative and sum to 1".into(),
            ));
        }
        if self.train.curve_every == 0 {
            return Err(Error::InvalidConfig("curve_every must be positive".into()));
        }
        Ok(())
    }

    /// Serialize the effective config for provenance.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
