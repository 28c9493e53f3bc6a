//! Training loops: mixed-scenario episode sampling around the per-agent
//! learning drivers, reward-curve emission, and checkpointing.

use std::path::{Path, PathBuf};

use super::drivers::{
    CdparTrainDriver, DtarTrainDriver, EpsilonSchedule, QrlsnTrainDriver,
};
use super::env::{ScenarioKind, World};
use super::episode::{run_episode, RouteDriver};
use crate::agents::{AgentKind, CdparAgent, DtarNet, EncoderKind, QrlsnAgent};
use crate::error::{Error, Result};
use crate::neural::save_checkpoint;
use crate::rng::{derive_seed, stream_rng};

/// One reward-curve sample: (decisions so far, 100-episode moving average of
/// per-flow episode reward).
pub type CurvePoint = (u64, f64);

/// Artifacts produced by a training run.
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub curve: Vec<CurvePoint>,
    pub decisions: u64,
}

/// Tracks the 100-episode moving average and emits curve points on a fixed
/// decision cadence.
struct CurveTracker {
    window: std::collections::VecDeque<f64>,
    points: Vec<CurvePoint>,
    every: u64,
    next_emit: u64,
}

impl CurveTracker {
    fn new(every: u64) -> Self {
        CurveTracker {
            window: std::collections::VecDeque::with_capacity(100),
            points: Vec::new(),
            every,
            next_emit: every,
        }
    }

    fn record_flow(&mut self, reward: f64) {
        if self.window.len() == 100 {
            self.window.pop_front();
        }
        self.window.push_back(reward);
    }

    fn maybe_emit(&mut self, decisions: u64) {
        while decisions >= self.next_emit {
            let mean = if self.window.is_empty() {
                0.0
            } else {
                self.window.iter().sum::<f64>() / self.window.len() as f64
            };
            self.points.push((self.next_emit, mean));
            self.next_emit += self.every;
        }
    }
}

fn checkpoint_path(out_dir: &Path, agent: AgentKind) -> PathBuf {
    out_dir.join(format!("{}.checkpoint.json", agent.name()))
}

fn periodic_path(out_dir: &Path, agent: AgentKind, steps: u64) -> PathBuf {
    out_dir.join(format!("{}.checkpoint.{}.json", agent.name(), steps))
}

pub fn curve_path(out_dir: &Path, agent: AgentKind) -> PathBuf {
    out_dir.join(format!("{}_reward_curve.csv", agent.name()))
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut text = String::from("step,episode_reward_mean_100\n");
    for (step, mean) in curve {
        text.push_str(&format!("{},{}\n", step, mean));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Train one agent on `world` for the configured number of decisions.
///
/// Episodes sample scenarios i.i.d. from the configured mix; the PPO family
/// updates on full rollout buffers, the Q-learning baselines per transition
/// or replay batch. Checkpoints land every `checkpoint_every` decisions and
/// at the end.
pub fn train(world: &World, agent: AgentKind, seed: u64, out_dir: &Path) -> Result<TrainOutput> {
    if !agent.trainable() {
        return Err(Error::NotTrainable(agent.name().to_string()));
    }
    std::fs::create_dir_all(out_dir)?;
    let cfg = &world.cfg;
    let total = cfg.train.total_timesteps;
    let schedule = EpsilonSchedule {
        start: cfg.train.epsilon_start,
        end: cfg.train.epsilon_end,
        horizon: total,
    };
    let k = world.num_domains();
    let init_seed = derive_seed(seed, 0x696e_6974);

    enum Learner {
        Ppo(DtarTrainDriver),
        Qrlsn(QrlsnTrainDriver),
        Cdpar(CdparTrainDriver),
    }

    let mut learner = match agent {
        AgentKind::Dtar | AgentKind::DtarRandpart => Learner::Ppo(DtarTrainDriver::new(
            DtarNet::new(k, EncoderKind::Gat, init_seed),
            world.encoder_edges.clone(),
            cfg.ppo.clone(),
            seed,
        )),
        AgentKind::DtarMlp => Learner::Ppo(DtarTrainDriver::new(
            DtarNet::new(k, EncoderKind::Mlp, init_seed),
            world.encoder_edges.clone(),
            cfg.ppo.clone(),
            seed,
        )),
        AgentKind::Qrlsn => Learner::Qrlsn(QrlsnTrainDriver::new(QrlsnAgent::new(k), schedule, seed)),
        AgentKind::Cdpar => Learner::Cdpar(CdparTrainDriver::new(
            CdparAgent::new(k, cfg.dqn.clone(), init_seed),
            schedule,
            seed,
        )),
        AgentKind::Dijkstra | AgentKind::Elb => unreachable!("checked above"),
    };

    let mut scenario_rng = stream_rng(seed, 0x7363_656e);
    let mut curve = CurveTracker::new(cfg.train.curve_every);
    let mut episode_tag = 0u64;
    let mut next_checkpoint = cfg.train.checkpoint_every;

    let save = |learner: &Learner, path: &Path, decisions: u64| -> Result<()> {
        match learner {
            Learner::Ppo(d) => save_checkpoint(path, agent.name(), decisions, &d.net().params, Some(d.adam())),
            Learner::Qrlsn(d) => d.agent().save(path),
            Learner::Cdpar(d) => d.agent().save(path, decisions),
        }
    };

    loop {
        let decisions = match &learner {
            Learner::Ppo(d) => d.decisions,
            Learner::Qrlsn(d) => d.decisions,
            Learner::Cdpar(d) => d.decisions,
        };
        curve.maybe_emit(decisions);
        if decisions >= total {
            break;
        }
        while next_checkpoint <= decisions && next_checkpoint < total {
            save(&learner, &periodic_path(out_dir, agent, next_checkpoint), decisions)?;
            next_checkpoint += cfg.train.checkpoint_every;
        }

        let kind = ScenarioKind::sample(&cfg.episode.scenario_weights, &mut scenario_rng);
        let driver: &mut dyn RouteDriver = match &mut learner {
            Learner::Ppo(d) => d,
            Learner::Qrlsn(d) => d,
            Learner::Cdpar(d) => d,
        };
        let outcome = run_episode(world, kind, seed, episode_tag, driver, false)?;
        episode_tag += 1;
        for r in &outcome.flow_rewards {
            curve.record_flow(*r);
        }
    }

    let decisions = match &learner {
        Learner::Ppo(d) => d.decisions,
        Learner::Qrlsn(d) => d.decisions,
        Learner::Cdpar(d) => d.decisions,
    };
    curve.maybe_emit(decisions);
    let checkpoint = checkpoint_path(out_dir, agent);
    save(&learner, &checkpoint, decisions)?;
    write_curve(&curve_path(out_dir, agent), &curve.points)?;
    Ok(TrainOutput {
        checkpoint,
        curve: curve.points,
        decisions,
    })
}

/// Load a trained agent for evaluation.
pub enum LoadedAgent {
    Policy(DtarNet),
    Qrlsn(QrlsnAgent),
    Cdpar(CdparAgent),
    Dijkstra,
    Elb,
}

pub fn load_agent(world: &World, agent: AgentKind, out_dir: &Path) -> Result<LoadedAgent> {
    let k = world.num_domains();
    match agent {
        AgentKind::Dijkstra => Ok(LoadedAgent::Dijkstra),
        AgentKind::Elb => Ok(LoadedAgent::Elb),
        AgentKind::Qrlsn => {
            let path = checkpoint_path(out_dir, agent);
            if !path.exists() {
                return Err(Error::MissingCheckpoint(
                    agent.name().into(),
                    path.display().to_string(),
                ));
            }
            Ok(LoadedAgent::Qrlsn(QrlsnAgent::load(&path, k)?))
        }
        AgentKind::Cdpar => {
            let path = checkpoint_path(out_dir, agent);
            if !path.exists() {
                return Err(Error::MissingCheckpoint(
                    agent.name().into(),
                    path.display().to_string(),
                ));
            }
            let mut a = CdparAgent::new(k, world.cfg.dqn.clone(), 0);
            a.load_weights(&path)?;
            Ok(LoadedAgent::Cdpar(a))
        }
        AgentKind::Dtar | AgentKind::DtarMlp | AgentKind::DtarRandpart => {
            let path = checkpoint_path(out_dir, agent);
            if !path.exists() {
                return Err(Error::MissingCheckpoint(
                    agent.name().into(),
                    path.display().to_string(),
                ));
            }
            let kind = if agent == AgentKind::DtarMlp {
                EncoderKind::Mlp
            } else {
                EncoderKind::Gat
            };
            let mut net = DtarNet::new(k, kind, 0);
            crate::neural::load_checkpoint(&path, &mut net.params)?;
            Ok(LoadedAgent::Policy(net))
        }
    }
}
