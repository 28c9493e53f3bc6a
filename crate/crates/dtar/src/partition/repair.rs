//! Multi-stage constraint repair for candidate partitions.
//!
//! Stages run in a fixed order: empty-domain revival, upper-bound repair,
//! lower-bound repair, connectivity repair, and a post-connectivity
//! lower-bound re-check with donor eligibility relaxed to two hops. A stage
//! can re-violate an earlier constraint, so the sequence loops until all
//! invariants hold, bounded by a total migration budget of 10 N.

use std::collections::VecDeque;

use super::{DomainPartition, SizeBounds};
use crate::constellation::SatGraph;
use crate::error::{Error, Result};
use crate::graph;

struct RepairState<'a> {
    labels: Vec<usize>,
    k: usize,
    g: &'a SatGraph,
    bounds: SizeBounds,
    migrations: usize,
    budget: usize,
}

impl<'a> RepairState<'a> {
    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    fn members_of(&self, d: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == d)
            .collect()
    }

    fn relabel(&mut self, node: usize, to: usize) -> Result<()> {
        self.labels[node] = to;
        self.migrations += 1;
        if self.migrations > self.budget {
            return Err(Error::RepairInfeasible(self.budget));
        }
        Ok(())
    }

    /// Whether removing `node` leaves its domain connected (or empty).
    fn safe_to_remove(&self, node: usize) -> bool {
        let d = self.labels[node];
        let rest: Vec<usize> = self
            .members_of(d)
            .into_iter()
            .filter(|&i| i != node)
            .collect();
        if rest.is_empty() {
            return true;
        }
        graph::induced_components(&rest, self.g.adjacency()).len() == 1
    }

    /// Border nodes of domain `d`: members with a neighbor labeled elsewhere.
    fn border_of(&self, d: usize) -> Vec<usize> {
        self.members_of(d)
            .into_iter()
            .filter(|&i| {
                self.g
                    .neighbors(i)
                    .iter()
                    .any(|&j| self.labels[j] != d)
            })
            .collect()
    }

    /// Stage 1: split a BFS chunk of ~n_min nodes off the largest domain to
    /// repopulate each empty domain.
    fn revive_empty(&mut self) -> Result<()> {
        loop {
            let sizes = self.sizes();
            let Some(empty) = (0..self.k).find(|&d| sizes[d] == 0) else {
                return Ok(());
            };
            let largest = (0..self.k).max_by_key(|&d| (sizes[d], self.k - d)).unwrap();
            if sizes[largest] < 2 {
                // Nothing to split; infeasible K > N.
                return Err(Error::RepairInfeasible(self.budget));
            }
            let donors = self.members_of(largest);
            let start = self
                .border_of(largest)
                .first()
                .copied()
                .unwrap_or(donors[0]);
            let chunk_size = self.bounds.min.min(sizes[largest] - 1).max(1);
            // BFS inside the donor domain, neighbors in ascending id order.
            let mut chunk = Vec::with_capacity(chunk_size);
            let mut queue = VecDeque::from([start]);
            let mut seen = vec![false; self.labels.len()];
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                chunk.push(u);
                if chunk.len() == chunk_size {
                    break;
                }
                for &v in self.g.neighbors(u) {
                    if !seen[v] && self.labels[v] == largest {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            for node in chunk {
                self.relabel(node, empty)?;
            }
        }
    }

    /// Stage 2: migrate boundary nodes out of oversized domains into
    /// adjacent domains with spare capacity.
    fn shrink_oversized(&mut self) -> Result<()> {
        loop {
            let sizes = self.sizes();
            let Some(big) = (0..self.k)
                .filter(|&d| sizes[d] > self.bounds.max)
                .max_by_key(|&d| (sizes[d], self.k - d))
            else {
                return Ok(());
            };
            let mut candidates: Vec<(usize, usize, usize)> = Vec::new(); // (node, target, spare)
            for node in self.border_of(big) {
                let mut targets: Vec<usize> = self
                    .g
                    .neighbors(node)
                    .iter()
                    .map(|&j| self.labels[j])
                    .filter(|&l| l != big && sizes[l] < self.bounds.max)
                    .collect();
                targets.sort_unstable();
                targets.dedup();
                if let Some(&target) = targets
                    .iter()
                    .max_by_key(|&&l| (self.bounds.max - sizes[l], self.k - l))
                {
                    candidates.push((node, target, self.bounds.max - sizes[target]));
                }
            }
            if candidates.is_empty() {
                return Ok(()); // retried on the next round after other stages
            }
            // Prefer moves that keep the donor connected; then most spare
            // capacity at the target; then smallest node id.
            let pick = candidates
                .iter()
                .filter(|&&(node, _, _)| self.safe_to_remove(node))
                .max_by_key(|&&(node, _, spare)| (spare, usize::MAX - node))
                .or_else(|| candidates.iter().max_by_key(|&&(node, _, spare)| (spare, usize::MAX - node)))
                .copied()
                .unwrap();
            self.relabel(pick.0, pick.1)?;
        }
    }

    /// Stages 3 and 5: pull boundary nodes into undersized domains. With
    /// `relax_two_hops`, a donor two hops away in the domain adjacency feeds
    /// the intermediate domain first so every individual move stays local.
    fn grow_undersized(&mut self, relax_two_hops: bool) -> Result<()> {
        let mut stall_guard = 0usize;
        loop {
            let sizes = self.sizes();
            let Some(small) = (0..self.k)
                .filter(|&d| sizes[d] < self.bounds.min)
                .min_by_key(|&d| (sizes[d], d))
            else {
                return Ok(());
            };
            stall_guard += 1;
            if stall_guard > self.budget {
                return Err(Error::RepairInfeasible(self.budget));
            }
            if self.pull_adjacent(small, &sizes)? {
                continue;
            }
            if !relax_two_hops {
                return Ok(());
            }
            // Two-hop relaxation: replenish an adjacent domain from one of
            // its own donors, then retry; if the chain cannot be built the
            // deficit is left for the next round.
            if !self.pull_two_hop(small, &sizes)? {
                return Ok(());
            }
        }
    }

    /// Move one node from an adjacent donor with spare (> n_min) into `d`.
    fn pull_adjacent(&mut self, d: usize, sizes: &[usize]) -> Result<bool> {
        let mut candidates: Vec<(usize, usize)> = Vec::new(); // (node, donor)
        for node in 0..self.labels.len() {
            let donor = self.labels[node];
            if donor == d || sizes[donor] <= self.bounds.min {
                continue;
            }
            if self.g.neighbors(node).iter().any(|&j| self.labels[j] == d) {
                candidates.push((node, donor));
            }
        }
        if candidates.is_empty() {
            return Ok(false);
        }
        let (node, _) = candidates
            .iter()
            .filter(|&&(node, _)| self.safe_to_remove(node))
            .max_by_key(|&&(node, donor)| (sizes[donor], usize::MAX - node))
            .or_else(|| {
                candidates
                    .iter()
                    .max_by_key(|&&(node, donor)| (sizes[donor], usize::MAX - node))
            })
            .copied()
            .unwrap();
        self.relabel(node, d)?;
        Ok(true)
    }

    /// Feed an adjacent domain of `d` from a two-hop donor so a subsequent
    /// `pull_adjacent` succeeds.
    fn pull_two_hop(&mut self, d: usize, sizes: &[usize]) -> Result<bool> {
        // Domains adjacent to d.
        let mut adjacent: Vec<usize> = Vec::new();
        for node in 0..self.labels.len() {
            if self.labels[node] == d {
                for &j in self.g.neighbors(node) {
                    if self.labels[j] != d && !adjacent.contains(&self.labels[j]) {
                        adjacent.push(self.labels[j]);
                    }
                }
            }
        }
        adjacent.sort_unstable();
        for mid in adjacent {
            // A node in some donor domain (> n_min) adjacent to `mid`.
            let mut candidates: Vec<(usize, usize)> = Vec::new();
            for node in 0..self.labels.len() {
                let donor = self.labels[node];
                if donor == mid || donor == d || sizes[donor] <= self.bounds.min {
                    continue;
                }
                if self
                    .g
                    .neighbors(node)
                    .iter()
                    .any(|&j| self.labels[j] == mid)
                {
                    candidates.push((node, donor));
                }
            }
            let pick = candidates
                .iter()
                .filter(|&&(node, _)| self.safe_to_remove(node))
                .max_by_key(|&&(node, donor)| (sizes[donor], usize::MAX - node))
                .or_else(|| {
                    candidates
                        .iter()
                        .max_by_key(|&&(node, donor)| (sizes[donor], usize::MAX - node))
                })
                .copied();
            if let Some((node, _)) = pick {
                self.relabel(node, mid)?;
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Stage 4: keep each domain's largest component and peel the rest onto
    /// neighboring domains by neighbor-majority vote.
    fn reconnect(&mut self) -> Result<()> {
        for d in 0..self.k {
            let members = self.members_of(d);
            if members.is_empty() {
                continue;
            }
            let comps = graph::induced_components(&members, self.g.adjacency());
            if comps.len() <= 1 {
                continue;
            }
            let mut strays: Vec<usize> = comps[1..].iter().flatten().copied().collect();
            strays.sort_unstable();
            while !strays.is_empty() {
                let mut progressed = false;
                let mut next_round = Vec::new();
                for &node in &strays {
                    let mut counts: Vec<(usize, usize)> = Vec::new();
                    for &j in self.g.neighbors(node) {
                        let l = self.labels[j];
                        if l == self.labels[node] {
                            continue;
                        }
                        match counts.iter_mut().find(|(lab, _)| *lab == l) {
                            Some((_, c)) => *c += 1,
                            None => counts.push((l, 1)),
                        }
                    }
                    if let Some(&(target, _)) = counts
                        .iter()
                        .max_by_key(|&&(lab, c)| (c, usize::MAX - lab))
                    {
                        self.relabel(node, target)?;
                        progressed = true;
                    } else {
                        next_round.push(node);
                    }
                }
                if !progressed {
                    // Interior nodes with no foreign neighbor and no peeled
                    // boundary left: impossible on a connected graph.
                    return Err(Error::RepairInfeasible(self.budget));
                }
                strays = next_round;
            }
        }
        Ok(())
    }
}

/// Enforce all partition invariants, preserving as much of the input
/// assignment as possible. Errors only when the bounds are infeasible for
/// the graph (budget exhausted).
pub fn repair(part: DomainPartition, g: &SatGraph, bounds: SizeBounds) -> Result<DomainPartition> {
    let k = part.num_domains();
    let n = part.num_nodes();
    let mut state = RepairState {
        labels: part.labels().to_vec(),
        k,
        g,
        bounds,
        migrations: 0,
        budget: 10 * n,
    };

    const MAX_ROUNDS: usize = 16;
    for _ in 0..MAX_ROUNDS {
        state.revive_empty()?;
        state.shrink_oversized()?;
        state.grow_undersized(false)?;
        state.reconnect()?;
        state.grow_undersized(true)?;
        let candidate = DomainPartition::from_labels(state.labels.clone(), k)?;
        if candidate.is_valid(g, bounds) {
            return Ok(candidate);
        }
    }
    Err(Error::RepairInfeasible(state.budget))
}
