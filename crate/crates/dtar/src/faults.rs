//! Stochastic fault/recovery process on inter-domain edges.
//!
//! Each step applies recoveries first, then draws failure candidates over
//! the healthy edges and applies them one at a time in edge-id order,
//! skipping any failure that would disconnect the operational domain graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::DomainGraph;
use crate::error::{Error, Result};
use crate::graph;

/// Per-step fault and recovery probabilities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultConfig {
    pub fail_prob: f64,
    pub recovery_prob: f64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            fail_prob: 0.02,
            recovery_prob: 0.02,
        }
    }
}

impl FaultConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("fail_prob", self.fail_prob), ("recovery_prob", self.recovery_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{} must lie in [0, 1]", name)));
            }
        }
        Ok(())
    }
}

/// Fault flags per inter-domain edge, indexed like `DomainGraph::edges()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultState {
    faulted: Vec<bool>,
}

/// A fault-process event, for the episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultEvent {
    Failed(usize),
    Recovered(usize),
}

impl FaultState {
    pub fn all_healthy(num_edges: usize) -> Self {
        FaultState {
            faulted: vec![false; num_edges],
        }
    }

    pub fn is_faulted(&self, edge: usize) -> bool {
        self.faulted[edge]
    }

    /// Available-link ratio: 0 when the bundle is down, 1 otherwise.
    pub fn available_ratio(&self, edge: usize) -> f64 {
        if self.faulted[edge] {
            0.0
        } else {
            1.0
        }
    }

    pub fn any_fault(&self) -> bool {
        self.faulted.iter().any(|&b| b)
    }

    pub fn num_faulted(&self) -> usize {
        self.faulted.iter().filter(|&&b| b).count()
    }

    pub fn num_edges(&self) -> usize {
        self.faulted.len()
    }

    /// Set a fault flag directly (tests and trace replay).
    pub fn force_fault(&mut self, edge: usize, faulted: bool) {
        self.faulted[edge] = faulted;
    }
}

/// Whether routing between adjacent domains `d_i` and `d_j` is currently
/// possible; errors on a non-edge query.
pub fn is_operational(
    state: &FaultState,
    dg: &DomainGraph,
    d_i: usize,
    d_j: usize,
) -> Result<bool> {
    let edge = dg.edge_index(d_i, d_j).ok_or(Error::NonEdge(d_i, d_j))?;
    Ok(!state.is_faulted(edge))
}

fn operational_connected(dg: &DomainGraph, faulted: &[bool]) -> bool {
    let edges: Vec<(usize, usize)> = dg
        .edges()
        .iter()
        .enumerate()
        .filter(|&(idx, _)| !faulted[idx])
        .map(|(_, e)| (e.a, e.b))
        .collect();
    let adj = graph::adjacency(dg.num_domains(), &edges);
    graph::is_connected(dg.num_domains(), &adj)
}

/// Advance the fault process by one step. Returns the new state and the
/// applied events in order.
pub fn step_faults(
    state: &FaultState,
    cfg: &FaultConfig,
    dg: &DomainGraph,
    rng: &mut ChaCha8Rng,
) -> (FaultState, Vec<FaultEvent>) {
    let mut faulted = state.faulted.clone();
    let mut events = Vec::new();

    // Recoveries first, in edge-id order.
    for (edge, flag) in faulted.iter_mut().enumerate() {
        if *flag && rng.gen::<f64>() < cfg.recovery_prob {
            *flag = false;
            events.push(FaultEvent::Recovered(edge));
        }
    }

    // Failure candidates drawn over the now-healthy edges, then applied
    // sequentially with a connectivity guard.
    let candidates: Vec<usize> = (0..faulted.len())
        .filter(|&e| !faulted[e] && rng.gen::<f64>() < cfg.fail_prob)
        .collect();
    for edge in candidates {
        faulted[edge] = true;
        if operational_connected(dg, &faulted) {
            events.push(FaultEvent::Failed(edge));
        } else {
            faulted[edge] = false;
        }
    }
    (FaultState { faulted }, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn cfg(p_f: f64, p_r: f64) -> FaultConfig {
        FaultConfig {
            fail_prob: p_f,
            recovery_prob: p_r,
        }
    }

    #[test]
    fn certain_recovery_clears_all_faults() {
        let dg = DomainGraph::from_edge_list(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let mut state = FaultState::all_healthy(4);
        state.force_fault(0, true);
        state.force_fault(2, true);
        let (next, _) = step_faults(&state, &cfg(0.0, 1.0), &dg, &mut stream_rng(1, 1));
        assert_eq!(next.num_faulted(), 0);
    }

    #[test]
    fn tree_edges_never_fail() {
        // Every edge of a tree is a bridge, so p_f = 1 applies nothing.
        let dg = DomainGraph::from_edge_list(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]);
        let state = FaultState::all_healthy(4);
        let (next, events) = step_faults(&state, &cfg(1.0, 0.0), &dg, &mut stream_rng(2, 2));
        assert_eq!(next.num_faulted(), 0);
        assert!(events.is_empty());
    }

    #[test]
    fn cycle_loses_exactly_one_edge() {
        // On a 4-cycle with p_f = 1 the first edge in id order fails; the
        // rest become bridges. Verified against a brute-force bridge finder.
        let dg = DomainGraph::from_edge_list(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let state = FaultState::all_healthy(4);
        let (next, events) = step_faults(&state, &cfg(1.0, 0.0), &dg, &mut stream_rng(3, 3));
        assert_eq!(next.num_faulted(), 1);
        assert!(next.is_faulted(0));
        assert_eq!(events, vec![FaultEvent::Failed(0)]);

        // Brute-force oracle: after removing edge 0, every remaining edge is
        // a bridge of the operational graph.
        for e in 1..4 {
            let mut probe = next.clone();
            probe.force_fault(e, true);
            let edges: Vec<(usize, usize)> = dg
                .edges()
                .iter()
                .enumerate()
                .filter(|&(idx, _)| !probe.is_faulted(idx))
                .map(|(_, de)| (de.a, de.b))
                .collect();
            let adj = crate::graph::adjacency(4, &edges);
            assert!(!crate::graph::is_connected(4, &adj));
        }
    }

    #[test]
    fn operational_query_and_non_edge_error() {
        let dg = DomainGraph::from_edge_list(3, &[(0, 1), (1, 2)]);
        let mut state = FaultState::all_healthy(2);
        assert!(is_operational(&state, &dg, 0, 1).unwrap());
        assert!(is_operational(&state, &dg, 2, 1).unwrap());
        state.force_fault(0, true);
        assert!(!is_operational(&state, &dg, 0, 1).unwrap());
        state.force_fault(0, false);
        assert!(is_operational(&state, &dg, 0, 1).unwrap());
        assert!(is_operational(&state, &dg, 0, 2).is_err());
    }

    #[test]
    fn connectivity_preserved_under_heavy_faulting() {
        let dg = DomainGraph::from_edge_list(
            6,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4), (2, 5)],
        );
        let mut state = FaultState::all_healthy(dg.num_edges());
        let mut rng = stream_rng(4, 4);
        for _ in 0..2000 {
            let (next, _) = step_faults(&state, &cfg(0.5, 0.5), &dg, &mut rng);
            state = next;
            let edges: Vec<(usize, usize)> = dg
                .edges()
                .iter()
                .enumerate()
                .filter(|&(idx, _)| !state.is_faulted(idx))
                .map(|(_, e)| (e.a, e.b))
                .collect();
            let adj = crate::graph::adjacency(6, &edges);
            assert!(crate::graph::is_connected(6, &adj));
        }
    }

    #[test]
    fn stationary_fault_fraction_near_half() {
        // Complete graph on 6 nodes: bridges are rare, so the long-run
        // fraction approaches p_f / (p_f + p_r) = 0.5 (biased slightly
        // low by connectivity skips).
        let mut edges = Vec::new();
        for a in 0..6 {
            for b in a + 1..6 {
                edges.push((a, b));
            }
        }
        let dg = DomainGraph::from_edge_list(6, &edges);
        let mut state = FaultState::all_healthy(dg.num_edges());
        let mut rng = stream_rng(5, 5);
        let mut acc = 0.0;
        let steps = 10_000;
        for _ in 0..steps {
            let (next, _) = step_faults(&state, &cfg(0.2, 0.2), &dg, &mut rng);
            state = next;
            acc += state.num_faulted() as f64 / state.num_edges() as f64;
        }
        let fraction = acc / steps as f64;
        assert!((fraction - 0.5).abs() < 0.1, "fraction = {}", fraction);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let dg = DomainGraph::from_edge_list(4, &[(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]);
        let run = |seed: u64| {
            let mut state = FaultState::all_healthy(dg.num_edges());
            let mut rng = stream_rng(seed, 9);
            let mut log = Vec::new();
            for _ in 0..100 {
                let (next, events) = step_faults(&state, &cfg(0.3, 0.3), &dg, &mut rng);
                state = next;
                log.push(events);
            }
            (state, log)
        };
        assert_eq!(run(7), run(7));
    }
}
