//! Rollout storage, generalized advantage estimation, and the clipped PPO
//! update.
//!
//! Transitions store the raw graph snapshot (deduplicated per environment
//! step) instead of baked embeddings, so every update epoch re-encodes the
//! domain graph with current parameters and gradients reach the encoder.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dtar::{DtarNet, SELF_LOOP_FEATURE};
use crate::error::Result;
use crate::neural::{
    adam_step, clip_grad_norm, AdamConfig, AdamState, GraphEdges, Tape, TapeBindings,
};

/// PPO hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub n_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            n_steps: 2048,
            epochs: 10,
            minibatch: 256,
            learning_rate: 3e-4,
            entropy_coef: 0.03,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

/// One stored decision.
#[derive(Debug, Clone)]
pub struct Transition {
    pub graph_id: usize,
    pub current: usize,
    pub dst: usize,
    pub const_feats: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub done: bool,
}

/// Snapshot of the domain-graph inputs for one environment step.
#[derive(Debug, Clone)]
struct GraphState {
    node_feats: Array2<f64>,
    /// Directed-dense edge features (self-loops included).
    edge_feats: Array2<f64>,
}

/// Fixed-capacity rollout storage with per-step graph deduplication.
#[derive(Debug)]
pub struct RolloutBuffer {
    capacity: usize,
    transitions: Vec<Transition>,
    graphs: Vec<GraphState>,
    /// External id of the last deduplicated graph state.
    last_graph_key: Option<usize>,
    /// Bootstrap value for a tail truncated mid-flow.
    pub tail_value: f64,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        RolloutBuffer {
            capacity,
            transitions: Vec::with_capacity(capacity),
            graphs: Vec::new(),
            last_graph_key: None,
            tail_value: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.transitions.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Register the graph snapshot for environment step `key`, expanding
    /// per-edge features to the directed layout. Consecutive pushes with the
    /// same key reuse the stored snapshot.
    pub fn graph_state(
        &mut self,
        key: usize,
        node_feats: &Array2<f64>,
        edge_feats: &Array2<f64>,
        edges: &GraphEdges,
    ) -> usize {
        if self.last_graph_key == Some(key) {
            return self.graphs.len() - 1;
        }
        self.graphs.push(GraphState {
            node_feats: node_feats.clone(),
            edge_feats: edges.expand_features(edge_feats, &SELF_LOOP_FEATURE),
        });
        self.last_graph_key = Some(key);
        self.graphs.len() - 1
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(!self.is_full(), "rollout buffer overflow");
        self.transitions.push(t);
    }

    /// Fold a dead-end penalty into the most recent transition and mark it
    /// terminal: the hop that led into the dead end carries the failure.
    pub fn amend_last_terminal(&mut self, extra_reward: f64) {
        if let Some(t) = self.transitions.last_mut() {
            t.reward += extra_reward;
            t.done = true;
        }
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.graphs.clear();
        self.last_graph_key = None;
        self.tail_value = 0.0;
    }
}

/// GAE advantages and returns.
///
/// delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t);
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1};
/// returns = A + V. `bootstrap` stands in for the value past the buffer end.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages
        .iter()
        .zip(values.iter())
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// Aggregate statistics from one PPO update.
#[derive(Debug, Clone, Copy, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Run E epochs of clipped-surrogate minibatch updates over the buffer.
pub fn ppo_update(
    net: &mut DtarNet,
    buffer: &RolloutBuffer,
    edges: &GraphEdges,
    cfg: &PpoConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    let n = buffer.len();
    debug_assert!(n > 0);
    let k = net.num_domains;

    let rewards: Vec<f64> = buffer.transitions.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = buffer.transitions.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = buffer.transitions.iter().map(|t| t.done).collect();
    let (advantages, returns) = gae(
        &rewards,
        &values,
        &dones,
        buffer.tail_value,
        cfg.gamma,
        cfg.lambda,
    );

    // Normalize advantages once per update.
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let std = (advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64).sqrt();
    let advantages: Vec<f64> = advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };

    let mut stats = PpoStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let b = chunk.len();

            // Unique graphs in this minibatch, in deterministic order.
            let mut unique: Vec<usize> = chunk.iter().map(|&i| buffer.transitions[i].graph_id).collect();
            unique.sort_unstable();
            unique.dedup();
            let slot_of = |gid: usize| unique.binary_search(&gid).expect("graph id present");

            let e_dir = edges.num_directed();
            let mut node_feats = Array2::zeros((unique.len() * k, 6));
            let mut edge_feats = Array2::zeros((unique.len() * e_dir, 3));
            for (u, &gid) in unique.iter().enumerate() {
                let g = &buffer.graphs[gid];
                node_feats
                    .slice_mut(ndarray::s![u * k..(u + 1) * k, ..])
                    .assign(&g.node_feats);
                edge_feats
                    .slice_mut(ndarray::s![u * e_dir..(u + 1) * e_dir, ..])
                    .assign(&g.edge_feats);
            }
            let batched_edges = edges.batched(unique.len());

            let mut rows_c = Vec::with_capacity(b);
            let mut rows_d = Vec::with_capacity(b);
            let mut const_feats = Array2::zeros((b, buffer.transitions[chunk[0]].const_feats.len()));
            let mut masks = Vec::with_capacity(b * k);
            let mut actions = Vec::with_capacity(b);
            let mut old_logp = Array2::zeros((b, 1));
            let mut adv = Array2::zeros((b, 1));
            let mut ret = Array2::zeros((b, 1));
            for (row, &i) in chunk.iter().enumerate() {
                let t = &buffer.transitions[i];
                let slot = slot_of(t.graph_id);
                rows_c.push(slot * k + t.current);
                rows_d.push(slot * k + t.dst);
                for (c, &f) in t.const_feats.iter().enumerate() {
                    const_feats[(row, c)] = f;
                }
                masks.extend(t.mask.iter().copied());
                actions.push(t.action);
                old_logp[(row, 0)] = t.log_prob;
                adv[(row, 0)] = advantages[i];
                ret[(row, 0)] = returns[i];
            }

            let mut tape = Tape::new();
            let mut bind = TapeBindings::new();
            let heads = net.batched_heads(
                &mut tape,
                &mut bind,
                node_feats,
                edge_feats,
                &batched_edges,
                Arc::new(rows_c),
                Arc::new(rows_d),
                const_feats,
                Arc::new(masks),
            )?;

            let logp_taken = tape.select_per_row(heads.log_probs, Arc::new(actions));
            let probs = tape.exp(heads.log_probs);
            let p_logp = tape.mul(probs, heads.log_probs);
            let neg_ent = tape.row_sum(p_logp);
            let entropy = tape.scale(neg_ent, -1.0);

            let old = tape.constant(old_logp);
            let adv_c = tape.constant(adv);
            let ret_c = tape.constant(ret);

            let log_ratio = tape.sub(logp_taken, old);
            let ratio = tape.exp(log_ratio);
            let surr1 = tape.mul(ratio, adv_c);
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let surr2 = tape.mul(clipped, adv_c);
            let objective = tape.min_elem(surr1, surr2);
            let mean_obj = tape.mean(objective);
            let policy_loss = tape.scale(mean_obj, -1.0);

            let v_err = tape.sub(heads.value, ret_c);
            let v_sq = tape.mul(v_err, v_err);
            let value_loss = tape.mean(v_sq);

            let mean_entropy = tape.mean(entropy);

            let scaled_v = tape.scale(value_loss, cfg.value_coef);
            let scaled_e = tape.scale(mean_entropy, -cfg.entropy_coef);
            let partial = tape.add(policy_loss, scaled_v);
            let loss = tape.add(partial, scaled_e);

            tape.backward(loss)?;
            let mut grads = bind.gradients(&tape, &net.params);
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            adam_step(&mut net.params, &grads, adam, &adam_cfg);

            stats.policy_loss += tape.value(policy_loss)[(0, 0)];
            stats.value_loss += tape.value(value_loss)[(0, 0)];
            stats.entropy += tape.value(mean_entropy)[(0, 0)];
            let ratios = tape.value(ratio);
            let clipped_count = ratios
                .iter()
                .filter(|&&r| (r - 1.0).abs() > cfg.clip)
                .count();
            stats.clip_fraction += clipped_count as f64 / b as f64;
            stats.minibatches += 1;
        }
    }
    if stats.minibatches > 0 {
        let m = stats.minibatches as f64;
        stats.policy_loss /= m;
        stats.value_loss /= m;
        stats.entropy /= m;
        stats.clip_fraction /= m;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::EncoderKind;
    use crate::rng::stream_rng;

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let rewards = [1.0, -0.5, 2.0];
        let values = [0.3, 0.7, 0.1];
        let dones = [false, false, true];
        let (adv, _) = gae(&rewards, &values, &dones, 9.0, 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * 0.7 - 0.3)).abs() < 1e-12);
        assert!((adv[1] - (-0.5 + 0.9 * 0.1 - 0.7)).abs() < 1e-12);
        assert!((adv[2] - (2.0 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn gae_monte_carlo_limit() {
        // lambda = 1, gamma = 1, V = 0: advantage is the undiscounted
        // future-reward sum until done.
        let rewards = [1.0, 2.0, 3.0, 10.0];
        let values = [0.0; 4];
        let dones = [false, false, true, true];
        let (adv, _) = gae(&rewards, &values, &dones, 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![6.0, 5.0, 3.0, 10.0]);
    }

    #[test]
    fn gae_matches_hand_recursion_oracle() {
        // r = (1, 0, 2), V = (0.5, 0.5, 0.5), gamma = 0.9, lambda = 0.8,
        // done at t = 2. Hand recursion:
        //   delta2 = 2 - 0.5 = 1.5,             A2 = 1.5
        //   delta1 = 0 + 0.9*0.5 - 0.5 = -0.05, A1 = -0.05 + 0.72*1.5 = 1.03
        //   delta0 = 1 + 0.9*0.5 - 0.5 = 0.95,  A0 = 0.95 + 0.72*1.03 = 1.6916
        let rewards = [1.0, 0.0, 2.0];
        let values = [0.5, 0.5, 0.5];
        let dones = [false, false, true];

        // Independent oracle, computed literally as above.
        let delta2: f64 = 1.5;
        let a2 = delta2;
        let delta1 = 0.0 + 0.9 * 0.5 - 0.5;
        let a1 = delta1 + 0.9 * 0.8 * a2;
        let delta0 = 1.0 + 0.9 * 0.5 - 0.5;
        let a0 = delta0 + 0.9 * 0.8 * a1;

        let (adv, ret) = gae(&rewards, &values, &dones, 0.77, 0.9, 0.8);
        assert!((adv[2] - a2).abs() < 1e-12);
        assert!((adv[1] - a1).abs() < 1e-12);
        assert!((adv[0] - a0).abs() < 1e-12);
        // Frozen literals.
        assert!((adv[0] - 1.6916).abs() < 1e-12);
        assert!((adv[1] - 1.03).abs() < 1e-12);
        assert!((adv[2] - 1.5).abs() < 1e-12);
        for (r, (a, v)) in ret.iter().zip(adv.iter().zip(values.iter())) {
            assert!((r - (a + v)).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_bootstraps_truncated_tail() {
        let rewards = [1.0];
        let values = [0.5];
        let dones = [false];
        let (adv, _) = gae(&rewards, &values, &dones, 2.0, 0.9, 0.8);
        assert!((adv[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-12);
    }

    fn tiny_setup() -> (DtarNet, GraphEdges, Array2<f64>, Array2<f64>) {
        let k = 3;
        let net = DtarNet::new(k, EncoderKind::Gat, 21);
        let edges = GraphEdges::from_undirected(k, &[(0, 1), (1, 2), (0, 2)]);
        let nf = Array2::from_shape_fn((k, 6), |(r, c)| ((r * 5 + c) as f64 * 0.21).sin());
        let ef = Array2::from_shape_fn((3, 3), |(r, c)| ((r + c) as f64 * 0.4).cos().abs());
        (net, edges, nf, ef)
    }

    fn fill_buffer(
        buffer: &mut RolloutBuffer,
        net: &DtarNet,
        edges: &GraphEdges,
        nf: &Array2<f64>,
        ef: &Array2<f64>,
        entries: &[(usize, usize, usize, f64, f64)], // (current, dst, action, reward, logp_offset)
    ) {
        let emb = net.encode(nf, ef, edges).unwrap();
        for &(current, dst, action, reward, logp_offset) in entries {
            let gid = buffer.graph_state(0, nf, ef, edges);
            let k = net.num_domains;
            let mut const_feats = vec![0.0; 7 + k];
            const_feats[0] = current as f64 / k as f64;
            const_feats[1] = dst as f64 / k as f64;
            let mask = vec![true; k];
            let mut obs = Vec::new();
            obs.extend(emb.row(current).iter());
            obs.extend(emb.row(dst).iter());
            obs.extend(const_feats.iter());
            let (logits, value) = net.policy_value(&obs);
            let dist = crate::neural::MaskedCategorical::new(&logits, &mask).unwrap();
            buffer.push(Transition {
                graph_id: gid,
                current,
                dst,
                const_feats,
                mask,
                action,
                reward,
                value,
                log_prob: dist.log_prob(action) + logp_offset,
                done: true,
            });
        }
    }

    #[test]
    fn no_op_update_with_equal_advantages() {
        // All-equal advantages normalize to zero; with zero entropy and
        // value coefficients the parameters must not move.
        let (mut net, edges, nf, ef) = tiny_setup();
        let mut buffer = RolloutBuffer::new(4);
        fill_buffer(
            &mut buffer,
            &net,
            &edges,
            &nf,
            &ef,
            &[
                (0, 2, 1, 1.0, 0.0),
                (1, 2, 0, 1.0, 0.0),
                (2, 0, 1, 1.0, 0.0),
                (0, 1, 2, 1.0, 0.0),
            ],
        );
        let before: Vec<_> = net.params.entries().iter().map(|p| p.value.clone()).collect();
        let cfg = PpoConfig {
            n_steps: 4,
            epochs: 2,
            minibatch: 2,
            entropy_coef: 0.0,
            value_coef: 0.0,
            // Equal rewards and done flags make every advantage identical.
            gamma: 0.0,
            lambda: 0.0,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(&net.params);
        let mut rng = stream_rng(1, 1);
        // Values differ per transition; force equal advantages by zeroing
        // gamma and using equal rewards minus value: advantage = r - V,
        // which varies. Instead assert through the normalized-zero path:
        // overwrite values to a constant.
        for t in buffer.transitions.iter_mut() {
            t.value = 0.25;
        }
        ppo_update(&mut net, &buffer, &edges, &cfg, &mut adam, &mut rng).unwrap();
        for (b, p) in before.iter().zip(net.params.entries()) {
            let max_delta = (b - &p.value).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            assert!(max_delta < 1e-12, "parameter {} moved {}", p.name, max_delta);
        }
    }

    #[test]
    fn clipped_objective_single_minibatch_closed_form() {
        // Two transitions with ratios 1.5 and 1/1.5 and advantages that
        // normalize to +1/-1: the surrogate takes the clipped branch on
        // both, so policy loss = -((1.2 + -0.8) / 2) = -0.2.
        let (mut net, edges, nf, ef) = tiny_setup();
        let mut buffer = RolloutBuffer::new(2);
        let ratio: f64 = 1.5;
        fill_buffer(
            &mut buffer,
            &net,
            &edges,
            &nf,
            &ef,
            &[
                // log_prob stored = logp_new - ln(1.5) -> ratio 1.5
                (0, 2, 1, 2.0, -ratio.ln()),
                // log_prob stored = logp_new + ln(1.5) -> ratio 1/1.5
                (1, 0, 2, -2.0, ratio.ln()),
            ],
        );
        for t in buffer.transitions.iter_mut() {
            t.value = 0.0;
        }
        let cfg = PpoConfig {
            n_steps: 2,
            epochs: 1,
            minibatch: 2,
            learning_rate: 0.0,
            entropy_coef: 0.0,
            value_coef: 0.0,
            gamma: 0.0,
            lambda: 0.0,
            clip: 0.2,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(&net.params);
        let mut rng = stream_rng(2, 2);
        let stats = ppo_update(&mut net, &buffer, &edges, &cfg, &mut adam, &mut rng).unwrap();
        // advantages (2, -2) normalize to (~1, ~-1); expected loss:
        // -mean(min(1.5*1, 1.2*1), min(0.6667*-1, 0.8*-1)) = -(1.2 - 0.8)/2
        assert!(
            (stats.policy_loss - (-0.2)).abs() < 1e-6,
            "policy loss {}",
            stats.policy_loss
        );
        assert!((stats.clip_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_term_reduces_loss_for_uniform_policy() {
        // ln(m) entropy with positive coefficient lowers the total loss; we
        // check the reported entropy of a fresh (near-uniform) policy is
        // positive and appears with the configured sign.
        let (mut net, edges, nf, ef) = tiny_setup();
        let mut buffer = RolloutBuffer::new(2);
        fill_buffer(
            &mut buffer,
            &net,
            &edges,
            &nf,
            &ef,
            &[(0, 2, 1, 1.0, 0.0), (1, 0, 0, -1.0, 0.0)],
        );
        let cfg = PpoConfig {
            n_steps: 2,
            epochs: 1,
            minibatch: 2,
            learning_rate: 0.0,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(&net.params);
        let mut rng = stream_rng(3, 3);
        let stats = ppo_update(&mut net, &buffer, &edges, &cfg, &mut adam, &mut rng).unwrap();
        assert!(stats.entropy > 0.0);
        assert!(stats.entropy <= (3.0f64).ln() + 1e-9);
    }

    #[test]
    fn nan_loss_aborts() {
        let (mut net, edges, nf, ef) = tiny_setup();
        let mut buffer = RolloutBuffer::new(1);
        fill_buffer(&mut buffer, &net, &edges, &nf, &ef, &[(0, 2, 1, f64::NAN, 0.0)]);
        let cfg = PpoConfig {
            n_steps: 1,
            epochs: 1,
            minibatch: 1,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(&net.params);
        let mut rng = stream_rng(4, 4);
        assert!(ppo_update(&mut net, &buffer, &edges, &cfg, &mut adam, &mut rng).is_err());
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let (mut net, edges, nf, ef) = tiny_setup();
            let mut buffer = RolloutBuffer::new(4);
            fill_buffer(
                &mut buffer,
                &net,
                &edges,
                &nf,
                &ef,
                &[
                    (0, 2, 1, 1.0, 0.0),
                    (1, 2, 0, -0.5, 0.0),
                    (2, 0, 1, 2.0, 0.0),
                    (0, 1, 2, 0.3, 0.0),
                ],
            );
            let cfg = PpoConfig {
                n_steps: 4,
                epochs: 3,
                minibatch: 2,
                ..PpoConfig::default()
            };
            let mut adam = AdamState::new(&net.params);
            let mut rng = stream_rng(5, 5);
            ppo_update(&mut net, &buffer, &edges, &cfg, &mut adam, &mut rng).unwrap();
            net.params
                .entries()
                .iter()
                .map(|p| p.value.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
