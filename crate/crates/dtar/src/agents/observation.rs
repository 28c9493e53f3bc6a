//! Observation layout.
//!
//! The policy observation concatenates the current and destination domain
//! embeddings (32 each), a 3-entry flow state, a K-entry neighbor distance
//! vector (-1 for domains not adjacent to the current one), and a 4-entry
//! global state: 71 + K entries total.

use ndarray::Array2;

use super::DecisionContext;
use crate::neural::EMBED_DIM;

/// Observation length for K domains.
pub fn obs_dim(k: usize) -> usize {
    2 * EMBED_DIM + 3 + k + 4
}

/// The non-embedding slice of the observation (flow state, distances,
/// global state), length 7 + K. Stored per transition so updates can
/// re-encode embeddings with current parameters.
pub fn const_features(ctx: &DecisionContext) -> Vec<f64> {
    let k = ctx.dg.num_domains();
    let mut v = Vec::with_capacity(7 + k);
    v.push(ctx.current as f64 / k as f64);
    v.push(ctx.dst as f64 / k as f64);
    v.push(ctx.hops_taken as f64 / ctx.h_max as f64);
    for d in 0..k {
        let entry = if ctx.dg.is_adjacent(ctx.current, d) {
            match ctx.distances[d] {
                Some(h) => h as f64 / k as f64,
                None => -1.0,
            }
        } else {
            -1.0
        };
        v.push(entry);
    }
    v.push(ctx.t_step as f64 / ctx.steps_per_episode as f64);
    v.push(ctx.cv.min(2.0) / 2.0);
    v.push(if ctx.surge { 1.0 } else { 0.0 });
    v.push(if ctx.any_fault { 1.0 } else { 0.0 });
    v
}

/// Full observation: embeddings of the current and destination domains
/// followed by [`const_features`].
pub fn build_observation(embeddings: &Array2<f64>, ctx: &DecisionContext) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs_dim(ctx.dg.num_domains()));
    v.extend(embeddings.row(ctx.current).iter());
    v.extend(embeddings.row(ctx.dst).iter());
    v.extend(const_features(ctx));
    v
}

/// Static-information entries preceding the shared flow/distance/time block
/// in the DQN baseline observation.
pub const CDPAR_STATIC_DIM: usize = 4;

/// DQN baseline observation: raw static node features of the current and
/// destination domains (normalized satellite count and cross-link count),
/// flow state, distance vector, time progress; the dynamic CV/surge/fault
/// slots stay zeroed. Length 11 + K.
pub fn cdpar_observation(ctx: &DecisionContext) -> Vec<f64> {
    let k = ctx.dg.num_domains();
    let mut v = Vec::with_capacity(CDPAR_STATIC_DIM + 7 + k);
    // Columns 0 (satellite count) and 2 (cross links) of the node feature
    // matrix are the static ones.
    v.push(ctx.node_feats[(ctx.current, 0)]);
    v.push(ctx.node_feats[(ctx.current, 2)]);
    v.push(ctx.node_feats[(ctx.dst, 0)]);
    v.push(ctx.node_feats[(ctx.dst, 2)]);
    let shared = const_features(ctx);
    let (flow_and_dist, global) = shared.split_at(3 + k);
    v.extend_from_slice(flow_and_dist);
    v.push(global[0]); // time progress
    v.extend_from_slice(&[0.0, 0.0, 0.0]); // CV / surge / fault zeroed
    v
}
