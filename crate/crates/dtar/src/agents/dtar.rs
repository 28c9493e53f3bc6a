//! The routing policy network: a domain-state encoder (graph attention, or
//! an independent per-domain MLP for the ablation) feeding masked policy and
//! value heads.

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::observation::{build_observation, obs_dim};
use super::DecisionContext;
use crate::error::Result;
use crate::neural::{
    log_softmax_rows, Activation, GatEncoder, GraphEdges, MaskedCategorical, Mlp, ParamSet, Tape,
    TapeBindings, Var, EMBED_DIM, HIDDEN_DIM, MASK_PENALTY, NODE_FEATURE_DIM,
};
use crate::rng::stream_rng;

/// Self-loop edge feature: fully available, no load, no fault.
pub const SELF_LOOP_FEATURE: [f64; 3] = [1.0, 0.0, 0.0];

/// Which domain-state encoder the policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Two edge-featured attention layers (message passing).
    Gat,
    /// Per-domain MLP applied independently; the ablation encoder.
    Mlp,
}

#[derive(Debug, Clone)]
enum Encoder {
    Gat(GatEncoder),
    Mlp(Mlp),
}

/// Actor-critic with a shared domain encoder. Policy and value heads are
/// two-hidden-layer MLPs (128, tanh); the encoder receives gradients from
/// both heads end-to-end.
#[derive(Debug, Clone)]
pub struct DtarNet {
    pub params: ParamSet,
    encoder: Encoder,
    policy: Mlp,
    value: Mlp,
    pub num_domains: usize,
}

/// Rollout-time action output.
#[derive(Debug, Clone, Copy)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
}

impl DtarNet {
    pub fn new(num_domains: usize, kind: EncoderKind, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x6e65_7400);
        let mut params = ParamSet::new();
        let encoder = match kind {
            EncoderKind::Gat => Encoder::Gat(GatEncoder::new(&mut params, "encoder", &mut rng)),
            EncoderKind::Mlp => Encoder::Mlp(Mlp::new(
                &mut params,
                "encoder.mlp",
                &[NODE_FEATURE_DIM, HIDDEN_DIM, EMBED_DIM],
                Activation::Elu,
                &mut rng,
            )),
        };
        let dim = obs_dim(num_domains);
        let policy = Mlp::new(
            &mut params,
            "policy",
            &[dim, 128, 128, num_domains],
            Activation::Tanh,
            &mut rng,
        );
        let value = Mlp::new(&mut params, "value", &[dim, 128, 128, 1], Activation::Tanh, &mut rng);
        DtarNet {
            params,
            encoder,
            policy,
            value,
            num_domains,
        }
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        match self.encoder {
            Encoder::Gat(_) => EncoderKind::Gat,
            Encoder::Mlp(_) => EncoderKind::Mlp,
        }
    }

    /// Tape-side encoder pass; `node_feats`/`edge_feats` may stack several
    /// graph instances when `edges` is a batched structure.
    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBindings,
        node_feats: Var,
        edge_feats: Var,
        edges: &GraphEdges,
    ) -> Result<Var> {
        match &self.encoder {
            Encoder::Gat(enc) => enc.forward(tape, bind, &self.params, node_feats, edge_feats, edges),
            Encoder::Mlp(mlp) => Ok(mlp.forward(tape, bind, &self.params, node_feats)),
        }
    }

    /// Frozen-parameter embedding pass for rollouts and evaluation.
    ///
    /// `edge_feats` holds per-undirected-edge features; self-loop expansion
    /// happens here.
    pub fn encode(
        &self,
        node_feats: &Array2<f64>,
        edge_feats: &Array2<f64>,
        edges: &GraphEdges,
    ) -> Result<Array2<f64>> {
        let dense = edges.expand_features(edge_feats, &SELF_LOOP_FEATURE);
        let mut tape = Tape::new();
        let mut bind = TapeBindings::frozen();
        let x = tape.constant(node_feats.clone());
        let ef = tape.constant(dense);
        let out = self.encode_on_tape(&mut tape, &mut bind, x, ef, edges)?;
        Ok(tape.value(out).clone())
    }

    /// Plain policy/value forward on one observation row.
    pub fn policy_value(&self, obs: &[f64]) -> (Vec<f64>, f64) {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row shape");
        let logits = self.policy.forward_plain(&self.params, &x);
        let value = self.value.forward_plain(&self.params, &x);
        (logits.row(0).to_vec(), value[(0, 0)])
    }

    /// Sample (or greedily pick) a masked action for one decision.
    pub fn act(
        &self,
        embeddings: &Array2<f64>,
        ctx: &DecisionContext,
        greedy: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActOutput> {
        let obs = build_observation(embeddings, ctx);
        let (logits, value) = self.policy_value(&obs);
        let dist = MaskedCategorical::new(&logits, ctx.mask)?;
        let action = if greedy { dist.argmax() } else { dist.sample(rng) };
        Ok(ActOutput {
            action,
            log_prob: dist.log_prob(action),
            value,
        })
    }

    /// Batched differentiable forward for the PPO update.
    ///
    /// Inputs stack `U` graph instances: `node_feats` is `(U*K) x 6`,
    /// `edge_feats` is dense-directed `(U*E_dir) x 3`, `edges` the batched
    /// structure. `emb_rows_*` select each transition's current/destination
    /// embedding rows; `const_feats` is `B x (7+K)`; `masks` is the
    /// row-major flattened `B x K` admissibility matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn batched_heads(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBindings,
        node_feats: Array2<f64>,
        edge_feats: Array2<f64>,
        edges: &GraphEdges,
        emb_rows_current: Arc<Vec<usize>>,
        emb_rows_dst: Arc<Vec<usize>>,
        const_feats: Array2<f64>,
        masks: Arc<Vec<bool>>,
    ) -> Result<BatchedHeads> {
        let x = tape.constant(node_feats);
        let ef = tape.constant(edge_feats);
        let emb = self.encode_on_tape(tape, bind, x, ef, edges)?;
        let h_c = tape.gather_rows(emb, emb_rows_current);
        let h_d = tape.gather_rows(emb, emb_rows_dst);
        let consts = tape.constant(const_feats);
        let obs = tape.concat_cols(&[h_c, h_d, consts]);
        let logits = self.policy.forward(tape, bind, &self.params, obs);
        let masked = tape.mask_replace(logits, masks, MASK_PENALTY);
        let log_probs = log_softmax_rows(tape, masked);
        let value = self.value.forward(tape, bind, &self.params, obs);
        Ok(BatchedHeads { log_probs, value })
    }
}

/// Tape handles produced by the batched forward.
pub struct BatchedHeads {
    /// `B x K` masked log-probabilities.
    pub log_probs: Var,
    /// `B x 1` state values.
    pub value: Var,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_walker, ConstellationConfig};
    use crate::domain::{
        action_mask, build_domain_graph, edge_features, hop_distances, node_features,
        LinkLoadState,
    };
    use crate::faults::FaultState;
    use crate::partition::DomainPartition;
    use crate::traffic::TrafficMatrix;

    struct Fixture {
        dg: crate::domain::DomainGraph,
        nf: Array2<f64>,
        ef: Array2<f64>,
        faults: FaultState,
        edges: GraphEdges,
    }

    fn fixture(k: usize) -> Fixture {
        let cfg = ConstellationConfig::default();
        let g = build_walker(&cfg).unwrap();
        let part = DomainPartition::uniform_plane_major(48, k);
        let dg = build_domain_graph(&part, &g).unwrap();
        let faults = FaultState::all_healthy(dg.num_edges());
        let t = TrafficMatrix::zeros(48);
        let nf = node_features(&dg, &faults, None, &t, &part);
        let ef = edge_features(&dg, &LinkLoadState::zeros(dg.num_edges()), &faults);
        let plain: Vec<(usize, usize)> = dg.edges().iter().map(|e| (e.a, e.b)).collect();
        let edges = GraphEdges::from_undirected(k, &plain);
        Fixture {
            dg,
            nf,
            ef,
            faults,
            edges,
        }
    }

    fn ctx<'a>(f: &'a Fixture, mask: &'a [bool], distances: &'a [Option<u32>]) -> DecisionContext<'a> {
        DecisionContext {
            dg: &f.dg,
            faults: &f.faults,
            node_feats: &f.nf,
            edge_feats: &f.ef,
            mask,
            distances,
            current: 0,
            dst: 3,
            hops_taken: 0,
            h_max: 9,
            t_step: 0,
            steps_per_episode: 144,
            cv: 0.0,
            surge: false,
            any_fault: false,
            graph_state_id: 0,
        }
    }

    #[test]
    fn single_admitted_action_is_deterministic() {
        let f = fixture(6);
        let net = DtarNet::new(6, EncoderKind::Gat, 1);
        let emb = net.encode(&f.nf, &f.ef, &f.edges).unwrap();
        let distances = hop_distances(&f.dg, &f.faults, 3);
        let mut mask = vec![false; 6];
        mask[1] = true;
        let c = ctx(&f, &mask, &distances);
        let mut rng = stream_rng(2, 2);
        for _ in 0..20 {
            let out = net.act(&emb, &c, false, &mut rng).unwrap();
            assert_eq!(out.action, 1);
            assert!(out.log_prob.abs() < 1e-9);
        }
    }

    #[test]
    fn masked_actions_are_suppressed() {
        let f = fixture(6);
        let net = DtarNet::new(6, EncoderKind::Gat, 3);
        let emb = net.encode(&f.nf, &f.ef, &f.edges).unwrap();
        let distances = hop_distances(&f.dg, &f.faults, 3);
        let mask = action_mask(&f.dg, &f.faults, 0, 3, 0, 9);
        let c = ctx(&f, &mask, &distances);
        let obs = build_observation(&emb, &c);
        let (logits, value) = net.policy_value(&obs);
        assert!(value.is_finite());
        let dist = MaskedCategorical::new(&logits, &mask).unwrap();
        for (a, &admitted) in mask.iter().enumerate() {
            if !admitted {
                assert!(dist.log_prob(a) <= -20.0);
            }
        }
    }

    #[test]
    fn values_finite_under_fuzzed_observations() {
        use rand::Rng;
        let net = DtarNet::new(6, EncoderKind::Gat, 4);
        let mut rng = stream_rng(5, 5);
        for _ in 0..200 {
            let obs: Vec<f64> = (0..obs_dim(6)).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (logits, value) = net.policy_value(&obs);
            assert!(value.is_finite());
            assert!(logits.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn mlp_encoder_shares_observation_layout() {
        let f = fixture(6);
        let net = DtarNet::new(6, EncoderKind::Mlp, 6);
        let emb = net.encode(&f.nf, &f.ef, &f.edges).unwrap();
        assert_eq!(emb.dim(), (6, EMBED_DIM));
        let distances = hop_distances(&f.dg, &f.faults, 3);
        let mask = action_mask(&f.dg, &f.faults, 0, 3, 0, 9);
        let c = ctx(&f, &mask, &distances);
        assert_eq!(build_observation(&emb, &c).len(), obs_dim(6));
    }

    #[test]
    fn mlp_encoder_ignores_graph_structure() {
        // No message passing: permuting the edge set must not change any
        // embedding.
        let f = fixture(6);
        let net = DtarNet::new(6, EncoderKind::Mlp, 7);
        let emb_a = net.encode(&f.nf, &f.ef, &f.edges).unwrap();
        let no_edges = GraphEdges::from_undirected(6, &[]);
        let empty = Array2::zeros((0, 3));
        let emb_b = net.encode(&f.nf, &empty, &no_edges).unwrap();
        assert_eq!(emb_a, emb_b);
    }
}
