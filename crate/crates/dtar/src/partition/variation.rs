//! Genetic operators: single-point crossover and the three mutation modes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{repair, DomainPartition, SizeBounds};
use crate::constellation::SatGraph;
use crate::error::Result;
use crate::traffic::{domain_loads_from_strengths, node_strengths, TrafficMatrix};

/// Which mutation was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationMode {
    /// Reassign a satellite to the domain of a same-plane ring neighbor.
    IntraOrbit,
    /// Move the best border node from the most- to the least-loaded domain.
    TrafficMigration,
    /// Reassign a random border node to a random adjacent domain.
    BoundaryExploration,
}

impl MutationMode {
    /// Stochastic mode choice: 60% / 20% / 20%.
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let u = rng.gen::<f64>();
        if u < 0.60 {
            MutationMode::IntraOrbit
        } else if u < 0.80 {
            MutationMode::TrafficMigration
        } else {
            MutationMode::BoundaryExploration
        }
    }
}

/// Raw single-point crossover: cut at k in [1, N), children swap suffixes.
pub fn crossover_raw(
    a: &[usize],
    b: &[usize],
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let cut = rng.gen_range(1..n);
    let mut c1 = a[..cut].to_vec();
    c1.extend_from_slice(&b[cut..]);
    let mut c2 = b[..cut].to_vec();
    c2.extend_from_slice(&a[cut..]);
    (c1, c2)
}

/// Single-point crossover; both children pass through repair.
pub fn crossover(
    p1: &DomainPartition,
    p2: &DomainPartition,
    g: &SatGraph,
    bounds: SizeBounds,
    rng: &mut ChaCha8Rng,
) -> Result<(DomainPartition, DomainPartition)> {
    let k = p1.num_domains();
    let (c1, c2) = crossover_raw(p1.labels(), p2.labels(), rng);
    let c1 = repair(DomainPartition::from_labels(c1, k)?, g, bounds)?;
    let c2 = repair(DomainPartition::from_labels(c2, k)?, g, bounds)?;
    Ok((c1, c2))
}

fn border_nodes(part: &DomainPartition, g: &SatGraph) -> Vec<usize> {
    (0..part.num_nodes())
        .filter(|&i| {
            g.neighbors(i)
                .iter()
                .any(|&j| part.label(j) != part.label(i))
        })
        .collect()
}

fn relabeled(part: &DomainPartition, node: usize, to: usize) -> DomainPartition {
    let mut labels = part.labels().to_vec();
    labels[node] = to;
    DomainPartition::from_labels(labels, part.num_domains()).expect("label in range")
}

/// Apply one mutation without repair. Returns the (possibly unchanged)
/// partition and the sampled mode. Safe on any label vector; a mode with no
/// eligible node leaves the input untouched.
pub fn mutate_raw(
    part: &DomainPartition,
    g: &SatGraph,
    t: &TrafficMatrix,
    rng: &mut ChaCha8Rng,
) -> (DomainPartition, MutationMode) {
    let mode = MutationMode::sample(rng);
    let out = match mode {
        MutationMode::IntraOrbit => {
            let node = rng.gen_range(0..part.num_nodes());
            let ring = g.intra_plane_neighbors(node);
            let neighbor = ring[rng.gen_range(0..2)];
            relabeled(part, node, part.label(neighbor))
        }
        MutationMode::TrafficMigration => traffic_migration(part, g, t),
        MutationMode::BoundaryExploration => {
            let border = border_nodes(part, g);
            if border.is_empty() {
                part.clone()
            } else {
                let node = border[rng.gen_range(0..border.len())];
                let mut targets: Vec<usize> = g
                    .neighbors(node)
                    .iter()
                    .map(|&j| part.label(j))
                    .filter(|&l| l != part.label(node))
                    .collect();
                targets.sort_unstable();
                targets.dedup();
                let to = targets[rng.gen_range(0..targets.len())];
                relabeled(part, node, to)
            }
        }
    };
    (out, mode)
}

/// Deterministic load-balancing move: pick, among border nodes of the
/// most-loaded domain adjacent to the least-loaded one, the node whose
/// migration minimizes sigma_L. Returns the input when no move helps.
fn traffic_migration(part: &DomainPartition, g: &SatGraph, t: &TrafficMatrix) -> DomainPartition {
    let strengths = node_strengths(t);
    let loads = domain_loads_from_strengths(&strengths, part);
    let k = loads.len();
    let (mut d_max, mut d_min) = (0, 0);
    for d in 1..k {
        if loads[d] > loads[d_max] {
            d_max = d;
        }
        if loads[d] < loads[d_min] {
            d_min = d;
        }
    }
    if d_max == d_min {
        return part.clone();
    }
    let sigma = |loads: &[f64]| {
        let kf = loads.len() as f64;
        let mean = loads.iter().sum::<f64>() / kf;
        (loads.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / kf).sqrt()
    };
    let current = sigma(&loads);
    let mut best: Option<(usize, f64)> = None;
    for &node in part.members(d_max) {
        let touches_target = g.neighbors(node).iter().any(|&j| part.label(j) == d_min);
        if !touches_target {
            continue;
        }
        let mut moved = loads.clone();
        moved[d_max] -= strengths[node];
        moved[d_min] += strengths[node];
        let s = sigma(&moved);
        if best.map_or(true, |(_, b)| s < b) {
            best = Some((node, s));
        }
    }
    match best {
        Some((node, s)) if s <= current => relabeled(part, node, d_min),
        _ => part.clone(),
    }
}

/// One stochastic mutation followed by repair.
pub fn mutate(
    part: &DomainPartition,
    g: &SatGraph,
    t: &TrafficMatrix,
    bounds: SizeBounds,
    rng: &mut ChaCha8Rng,
) -> Result<DomainPartition> {
    let (raw, _) = mutate_raw(part, g, t, rng);
    repair(raw, g, bounds)
}
