//! Fault-unaware shortest-path baselines.
//!
//! Both route on the static domain graph (faulted edges included); a flow
//! fails at traversal time if the chosen edge happens to be down. Dijkstra
//! uses hop count; ELB weighs edges by a load snapshot frozen at the start
//! of each episode.

use crate::domain::{DomainGraph, LinkLoadState};

/// Hop-count shortest path with smallest-id tie-breaking.
#[derive(Debug, Clone)]
pub struct DijkstraAgent {
    /// dist[dst][v] = static hop distance from v to dst.
    dist: Vec<Vec<u32>>,
}

impl DijkstraAgent {
    pub fn new(dg: &DomainGraph) -> Self {
        let k = dg.num_domains();
        let mut dist = Vec::with_capacity(k);
        for dst in 0..k {
            let mut d = vec![u32::MAX; k];
            d[dst] = 0;
            let mut queue = std::collections::VecDeque::from([dst]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in dg.neighbors(u) {
                    if d[v] == u32::MAX {
                        d[v] = d[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist.push(d);
        }
        DijkstraAgent { dist }
    }

    /// Next hop from `current` toward `dst` on the static graph.
    pub fn next_hop(&self, dg: &DomainGraph, current: usize, dst: usize) -> usize {
        debug_assert_ne!(current, dst);
        let mut best: Option<(u32, usize)> = None;
        for &(v, _) in dg.neighbors(current) {
            let d = self.dist[dst][v];
            let better = match best {
                None => true,
                Some((bd, bv)) => d < bd || (d == bd && v < bv),
            };
            if better {
                best = Some((d, v));
            }
        }
        best.expect("connected domain graph has a neighbor").1
    }

    pub fn distance(&self, from: usize, dst: usize) -> u32 {
        self.dist[dst][from]
    }
}

/// Load-weighted shortest path on a static snapshot: edge weight
/// 1 + W_ij(t0) / max(mean W(t0), eps), frozen for the whole episode.
#[derive(Debug, Clone)]
pub struct ElbAgent {
    weights: Vec<f64>,
    /// dist[dst][v] = weighted distance from v to dst.
    dist: Vec<Vec<f64>>,
}

impl ElbAgent {
    pub fn new(dg: &DomainGraph, snapshot: &LinkLoadState) -> Self {
        let eps = 1e-9;
        let loads = snapshot.loads();
        let mean = if loads.is_empty() {
            0.0
        } else {
            loads.iter().sum::<f64>() / loads.len() as f64
        };
        let denom = mean.max(eps);
        let weights: Vec<f64> = loads.iter().map(|w| 1.0 + w / denom).collect();

        let k = dg.num_domains();
        let mut dist = Vec::with_capacity(k);
        for dst in 0..k {
            dist.push(Self::weighted_distances(dg, &weights, dst));
        }
        ElbAgent { weights, dist }
    }

    fn weighted_distances(dg: &DomainGraph, weights: &[f64], dst: usize) -> Vec<f64> {
        let k = dg.num_domains();
        let mut d = vec![f64::INFINITY; k];
        d[dst] = 0.0;
        let mut settled = vec![false; k];
        for _ in 0..k {
            let mut u = None;
            let mut best = f64::INFINITY;
            for v in 0..k {
                if !settled[v] && d[v] < best {
                    best = d[v];
                    u = Some(v);
                }
            }
            let Some(u) = u else { break };
            settled[u] = true;
            for &(v, edge) in dg.neighbors(u) {
                let cand = d[u] + weights[edge];
                if cand < d[v] {
                    d[v] = cand;
                }
            }
        }
        d
    }

    /// Next hop minimizing edge weight plus weighted remaining distance;
    /// smallest-id tie-breaking.
    pub fn next_hop(&self, dg: &DomainGraph, current: usize, dst: usize) -> usize {
        debug_assert_ne!(current, dst);
        let mut best: Option<(f64, usize)> = None;
        for &(v, edge) in dg.neighbors(current) {
            let cost = self.weights[edge] + self.dist[dst][v];
            let better = match best {
                None => true,
                Some((bc, bv)) => cost < bc - 1e-12 || ((cost - bc).abs() <= 1e-12 && v < bv),
            };
            if better {
                best = Some((cost, v));
            }
        }
        best.expect("connected domain graph has a neighbor").1
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights[edge]
    }
}
