//! DQN baseline on the same optimized partition, fed only static domain
//! attributes plus flow/distance/time state (no real-time link encoding).

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::observation::CDPAR_STATIC_DIM;
use crate::error::{Error, Result};
use crate::neural::{
    adam_step, load_checkpoint, save_checkpoint, Activation, AdamConfig, AdamState, Mlp, ParamSet,
    Tape, TapeBindings,
};
use crate::rng::stream_rng;

/// DQN hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Target network sync period, in stored transitions.
    pub target_sync: usize,
    /// Learn every this many stored transitions.
    pub train_freq: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            learning_rate: 3e-4,
            buffer_capacity: 50_000,
            batch_size: 256,
            target_sync: 1000,
            train_freq: 4,
        }
    }
}

#[derive(Debug, Clone)]
struct Replay {
    obs: Vec<f64>,
    action: usize,
    reward: f64,
    next_obs: Vec<f64>,
    next_mask: Vec<bool>,
    done: bool,
}

/// Q-network (obs -> 128 -> 128 -> K) with replay buffer and target network.
pub struct CdparAgent {
    pub params: ParamSet,
    target: ParamSet,
    net: Mlp,
    pub cfg: DqnConfig,
    pub adam: AdamState,
    replay: VecDeque<Replay>,
    stored: usize,
    num_domains: usize,
    obs_dim: usize,
}

impl CdparAgent {
    pub fn new(num_domains: usize, cfg: DqnConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x6371_6e00);
        let obs_dim = CDPAR_STATIC_DIM + 7 + num_domains;
        let mut params = ParamSet::new();
        let net = Mlp::new(
            &mut params,
            "q",
            &[obs_dim, 128, 128, num_domains],
            Activation::Tanh,
            &mut rng,
        );
        let target = params.clone();
        let adam = AdamState::new(&params);
        CdparAgent {
            params,
            target,
            net,
            cfg,
            adam,
            replay: VecDeque::new(),
            stored: 0,
            num_domains,
            obs_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_domains
    }

    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
        self.net.forward_plain(&self.params, &x).row(0).to_vec()
    }

    fn target_q_values(&self, obs: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
        self.net.forward_plain(&self.target, &x).row(0).to_vec()
    }

    /// Epsilon-greedy masked action.
    pub fn act(
        &self,
        obs: &[f64],
        mask: &[bool],
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        let admitted: Vec<usize> = (0..self.num_domains).filter(|&a| mask[a]).collect();
        if admitted.is_empty() {
            return Err(Error::EmptyMask);
        }
        if rng.gen::<f64>() < epsilon {
            return Ok(admitted[rng.gen_range(0..admitted.len())]);
        }
        Ok(self.greedy(obs, mask))
    }

    /// Greedy admitted action; ties break to the smallest id.
    pub fn greedy(&self, obs: &[f64], mask: &[bool]) -> usize {
        let q = self.q_values(obs);
        let mut best: Option<(f64, usize)> = None;
        for (a, &admitted) in mask.iter().enumerate() {
            if admitted && best.map_or(true, |(bv, _)| q[a] > bv) {
                best = Some((q[a], a));
            }
        }
        best.expect("caller checks mask").1
    }

    /// Store one transition; syncs the target network on schedule and
    /// returns the TD loss when a learning step ran.
    pub fn remember_and_learn(
        &mut self,
        obs: Vec<f64>,
        action: usize,
        reward: f64,
        next_obs: Vec<f64>,
        next_mask: Vec<bool>,
        done: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<f64>> {
        if self.replay.len() == self.cfg.buffer_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(Replay {
            obs,
            action,
            reward,
            next_obs,
            next_mask,
            done,
        });
        self.stored += 1;
        if self.stored % self.cfg.target_sync == 0 {
            self.sync_target();
        }
        if self.replay.len() < self.cfg.batch_size || self.stored % self.cfg.train_freq != 0 {
            return Ok(None);
        }
        let idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| rng.gen_range(0..self.replay.len()))
            .collect();
        self.learn_batch(&idx).map(Some)
    }

    /// TD target: r + gamma * max over next-admitted target-network Q.
    fn td_target(&self, r: &Replay) -> f64 {
        if r.done {
            return r.reward;
        }
        let q_next = self.target_q_values(&r.next_obs);
        let best = r
            .next_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(a, _)| q_next[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let best = if best.is_finite() { best } else { 0.0 };
        r.reward + self.cfg.gamma * best
    }

    fn learn_batch(&mut self, idx: &[usize]) -> Result<f64> {
        let b = idx.len();
        let mut obs = Array2::zeros((b, self.obs_dim));
        let mut actions = Vec::with_capacity(b);
        let mut targets = Array2::zeros((b, 1));
        for (row, &i) in idx.iter().enumerate() {
            let r = &self.replay[i];
            for (c, &v) in r.obs.iter().enumerate() {
                obs[(row, c)] = v;
            }
            actions.push(r.action);
            targets[(row, 0)] = self.td_target(r);
        }

        let mut tape = Tape::new();
        let mut bind = TapeBindings::new();
        let x = tape.constant(obs);
        let q = self.net.forward(&mut tape, &mut bind, &self.params, x);
        let q_sa = tape.select_per_row(q, Arc::new(actions));
        let t = tape.constant(targets);
        let err = tape.sub(q_sa, t);
        let sq = tape.mul(err, err);
        let loss = tape.mean(sq);
        tape.backward(loss)?;
        let grads = bind.gradients(&tape, &self.params);
        let adam_cfg = AdamConfig {
            lr: self.cfg.learning_rate,
            ..AdamConfig::default()
        };
        adam_step(&mut self.params, &grads, &mut self.adam, &adam_cfg);
        Ok(tape.value(loss)[(0, 0)])
    }

    /// Copy online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.params.clone();
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.target
    }

    pub fn save(&self, path: &std::path::Path, trained_steps: u64) -> Result<()> {
        save_checkpoint(path, "cdpar", trained_steps, &self.params, Some(&self.adam))
    }

    pub fn load_weights(&mut self, path: &std::path::Path) -> Result<u64> {
        let loaded = load_checkpoint(path, &mut self.params)?;
        if let Some(adam) = loaded.adam {
            self.adam = adam;
        }
        self.sync_target();
        Ok(loaded.trained_steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_agent() -> CdparAgent {
        CdparAgent::new(
            3,
            DqnConfig {
                batch_size: 2,
                target_sync: 1000,
                train_freq: 1,
                ..DqnConfig::default()
            },
            7,
        )
    }

    #[test]
    fn target_sync_copies_parameters_exactly() {
        let mut agent = tiny_agent();
        // Drift the online net.
        let grads: Vec<Array2<f64>> = agent
            .params
            .entries()
            .iter()
            .map(|p| Array2::from_elem(p.value.dim(), 0.5))
            .collect();
        let cfg = AdamConfig::default();
        adam_step(&mut agent.params, &grads, &mut agent.adam, &cfg);
        assert_ne!(
            agent.params.entries()[0].value,
            agent.target_params().entries()[0].value
        );
        agent.sync_target();
        for (online, target) in agent
            .params
            .entries()
            .iter()
            .zip(agent.target_params().entries())
        {
            assert_eq!(online.value, target.value);
        }
    }

    #[test]
    fn terminal_td_target_is_raw_reward() {
        let agent = tiny_agent();
        let r = Replay {
            obs: vec![0.0; agent.obs_dim()],
            action: 1,
            reward: 4.5,
            next_obs: vec![0.0; agent.obs_dim()],
            next_mask: vec![true; 3],
            done: true,
        };
        assert_eq!(agent.td_target(&r), 4.5);
    }

    #[test]
    fn td_loss_matches_hand_computation() {
        let mut agent = tiny_agent();
        let obs_a = vec![0.2; agent.obs_dim()];
        let obs_b = vec![-0.1; agent.obs_dim()];
        let next = vec![0.05; agent.obs_dim()];
        let mask = vec![true, true, false];

        // Hand-computed squared TD errors from the current networks.
        let q_a = agent.q_values(&obs_a)[0];
        let q_next = agent.target_q_values(&next);
        let best = q_next[0].max(q_next[1]);
        let target_a = 1.0 + agent.cfg.gamma * best;
        let q_b = agent.q_values(&obs_b)[2];
        let target_b = -2.0; // terminal

        agent.replay.push_back(Replay {
            obs: obs_a,
            action: 0,
            reward: 1.0,
            next_obs: next.clone(),
            next_mask: mask.clone(),
            done: false,
        });
        agent.replay.push_back(Replay {
            obs: obs_b,
            action: 2,
            reward: -2.0,
            next_obs: next,
            next_mask: mask,
            done: true,
        });
        let loss = agent.learn_batch(&[0, 1]).unwrap();
        let expect = ((q_a - target_a).powi(2) + (q_b - target_b).powi(2)) / 2.0;
        assert!((loss - expect).abs() < 1e-9, "{} vs {}", loss, expect);
    }

    #[test]
    fn masked_epsilon_greedy_stays_admitted() {
        let agent = tiny_agent();
        let mut rng = stream_rng(3, 3);
        let mask = vec![false, true, true];
        let obs = vec![0.1; agent.obs_dim()];
        for _ in 0..1000 {
            let a = agent.act(&obs, &mask, 1.0, &mut rng).unwrap();
            assert!(mask[a]);
        }
        assert!(agent.act(&obs, &[false; 3], 0.0, &mut rng).is_err());
    }
}
