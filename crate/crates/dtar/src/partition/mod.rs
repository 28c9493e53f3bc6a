//! Offline bi-objective domain partitioning.
//!
//! An NSGA-II search assigns every satellite to one of K domains, maximizing
//! the intra-domain traffic ratio while minimizing the deviation of per-domain
//! aggregated loads. A multi-stage repair operator keeps every candidate
//! inside the hard constraints (non-empty, size-bounded, internally
//! connected), leaving the objectives fully subject to the search.

mod repair;
mod sorting;
mod variation;

pub use repair::repair;
pub use sorting::{crowding_distance, nondominated_sort};
pub use variation::{crossover, mutate, MutationMode};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::SatGraph;
use crate::error::{Error, Result};
use crate::graph;
use crate::rng;
use crate::traffic::TrafficMatrix;

/// Assignment of every satellite to a domain, with derived member sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainPartition {
    labels: Vec<usize>,
    num_domains: usize,
    members: Vec<Vec<usize>>,
}

impl DomainPartition {
    /// Wrap a label vector; labels must already lie in `[0, k)`.
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for k={}",
                bad, k
            )));
        }
        let mut members = vec![Vec::new(); k];
        for (node, &label) in labels.iter().enumerate() {
            members[label].push(node);
        }
        Ok(DomainPartition {
            labels,
            num_domains: k,
            members,
        })
    }

    /// K contiguous plane-major blocks of N/K nodes (remainder spread over
    /// the leading domains). This is the orbital seed partition and the
    /// uniform-partition ablation baseline.
    pub fn uniform_plane_major(n: usize, k: usize) -> Self {
        let base = n / k;
        let extra = n % k;
        let mut labels = Vec::with_capacity(n);
        for d in 0..k {
            let size = base + usize::from(d < extra);
            labels.extend(std::iter::repeat(d).take(size));
        }
        DomainPartition::from_labels(labels, k).expect("uniform labels are in range")
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn members(&self, domain: usize) -> &[usize] {
        &self.members[domain]
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn domain_size(&self, domain: usize) -> usize {
        self.members[domain].len()
    }

    /// Check the hard constraints: every domain non-empty, sizes within
    /// bounds, and every induced subgraph connected.
    pub fn validate(&self, g: &SatGraph, bounds: SizeBounds) -> Result<()> {
        for d in 0..self.num_domains {
            let size = self.members[d].len();
            if size == 0 {
                return Err(Error::InvalidConfig(format!("domain {} is empty", d)));
            }
            if size < bounds.min || size > bounds.max {
                return Err(Error::InvalidConfig(format!(
                    "domain {} size {} outside [{}, {}]",
                    d, size, bounds.min, bounds.max
                )));
            }
            let comps = graph::induced_components(&self.members[d], g.adjacency());
            if comps.len() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "domain {} splits into {} components",
                    d,
                    comps.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, g: &SatGraph, bounds: SizeBounds) -> bool {
        self.validate(g, bounds).is_ok()
    }
}

/// Inclusive domain-size bounds enforced by repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub min: usize,
    pub max: usize,
}

impl SizeBounds {
    /// Default bounds: floor(0.5 N/K) .. ceil(1.5 N/K), with min clamped to 1.
    pub fn default_for(n: usize, k: usize) -> Self {
        let ratio = n as f64 / k as f64;
        SizeBounds {
            min: ((0.5 * ratio).floor() as usize).max(1),
            max: (1.5 * ratio).ceil() as usize,
        }
    }

    pub fn feasible(&self, n: usize, k: usize) -> bool {
        self.min * k <= n && n <= self.max * k
    }
}

/// Intra-domain traffic ratio: the fraction of total demand whose endpoints
/// share a domain. Errors when the matrix carries no traffic.
pub fn idtr(part: &DomainPartition, t: &TrafficMatrix) -> Result<f64> {
    let total = t.total();
    if total <= 0.0 {
        return Err(Error::ZeroTraffic);
    }
    let n = t.num_nodes();
    let mut intra = 0.0;
    for i in 0..n {
        let li = part.label(i);
        for j in 0..n {
            if part.label(j) == li {
                intra += t.get(i, j);
            }
        }
    }
    Ok(intra / total)
}

/// Population standard deviation of per-domain aggregated loads.
pub fn load_deviation(part: &DomainPartition, t: &TrafficMatrix) -> f64 {
    let loads = crate::traffic::domain_loads(t, part);
    let k = loads.len() as f64;
    let mean = loads.iter().sum::<f64>() / k;
    let var = loads.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / k;
    var.sqrt()
}

/// One candidate partition with its evaluated objectives and NSGA-II
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct Individual {
    pub partition: DomainPartition,
    /// Maximized.
    pub idtr: f64,
    /// Minimized.
    pub sigma_l: f64,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    fn evaluated(partition: DomainPartition, t: &TrafficMatrix) -> Result<Self> {
        let idtr = idtr(&partition, t)?;
        let sigma_l = load_deviation(&partition, t);
        Ok(Individual {
            partition,
            idtr,
            sigma_l,
            rank: 0,
            crowding: 0.0,
        })
    }

    /// `a` dominates `b` iff it is no worse on both objectives and strictly
    /// better on at least one.
    pub fn dominates(&self, other: &Individual) -> bool {
        let no_worse = self.idtr >= other.idtr && self.sigma_l <= other.sigma_l;
        let strictly = self.idtr > other.idtr || self.sigma_l < other.sigma_l;
        no_worse && strictly
    }
}

/// NSGA-II knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Nsga2Config {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament: usize,
    /// 0 means "derive from N and K" via [`SizeBounds::default_for`].
    pub size_min: usize,
    pub size_max: usize,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Nsga2Config {
            population: 100,
            generations: 200,
            crossover_prob: 0.9,
            mutation_prob: 0.9,
            tournament: 2,
            size_min: 0,
            size_max: 0,
        }
    }
}

impl Nsga2Config {
    pub fn bounds(&self, n: usize, k: usize) -> SizeBounds {
        if self.size_min == 0 && self.size_max == 0 {
            SizeBounds::default_for(n, k)
        } else {
            SizeBounds {
                min: self.size_min,
                max: self.size_max,
            }
        }
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.population < 4 || self.population % 2 != 0 {
            return Err(Error::InvalidConfig(
                "population must be even and >= 4".into(),
            ));
        }
        if self.tournament < 2 {
            return Err(Error::InvalidConfig("tournament size must be >= 2".into()));
        }
        let bounds = self.bounds(n, k);
        if !bounds.feasible(n, k) {
            return Err(Error::InvalidConfig(format!(
                "size bounds [{}, {}] infeasible for N={} K={}",
                bounds.min, bounds.max, n, k
            )));
        }
        Ok(())
    }
}

/// Per-generation best objectives, for convergence inspection.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationStats {
    pub best_idtr: f64,
    pub best_sigma_l: f64,
}

/// Min-max normalization baseline used by the final selection score.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreNormalization {
    pub idtr_min: f64,
    pub idtr_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Output of [`run_nsga2`].
#[derive(Debug, Clone)]
pub struct Nsga2Result {
    /// Rank-0 front of the final population.
    pub pareto_front: Vec<Individual>,
    pub selected: Individual,
    pub history: Vec<GenerationStats>,
    pub normalization: ScoreNormalization,
}

fn tournament_pick<'a>(
    pop: &'a [Individual],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> &'a Individual {
    let mut best = &pop[rng.gen_range(0..pop.len())];
    for _ in 1..size {
        let challenger = &pop[rng.gen_range(0..pop.len())];
        let better = challenger.rank < best.rank
            || (challenger.rank == best.rank && challenger.crowding > best.crowding);
        if better {
            best = challenger;
        }
    }
    best
}

/// Repair then evaluate one raw label vector. Pure; used by both the
/// sequential and the rayon population paths.
fn repair_and_evaluate(
    labels: Vec<usize>,
    k: usize,
    g: &SatGraph,
    t: &TrafficMatrix,
    bounds: SizeBounds,
) -> Result<Individual> {
    let part = repair(DomainPartition::from_labels(labels, k)?, g, bounds)?;
    Individual::evaluated(part, t)
}

/// Sequential repair + objective evaluation of raw offspring label vectors.
pub fn evaluate_offspring_seq(
    raw: Vec<Vec<usize>>,
    k: usize,
    g: &SatGraph,
    t: &TrafficMatrix,
    bounds: SizeBounds,
) -> Result<Vec<Individual>> {
    raw.into_iter()
        .map(|labels| repair_and_evaluate(labels, k, g, t, bounds))
        .collect()
}

/// Rayon repair + objective evaluation. Each element is a pure function of
/// its inputs, so results are identical to the sequential path.
#[cfg(feature = "parallel")]
pub fn evaluate_offspring_par(
    raw: Vec<Vec<usize>>,
    k: usize,
    g: &SatGraph,
    t: &TrafficMatrix,
    bounds: SizeBounds,
) -> Result<Vec<Individual>> {
    use rayon::prelude::*;
    raw.into_par_iter()
        .map(|labels| repair_and_evaluate(labels, k, g, t, bounds))
        .collect()
}

fn evaluate_offspring(
    raw: Vec<Vec<usize>>,
    k: usize,
    g: &SatGraph,
    t: &TrafficMatrix,
    bounds: SizeBounds,
) -> Result<Vec<Individual>> {
    #[cfg(feature = "parallel")]
    {
        evaluate_offspring_par(raw, k, g, t, bounds)
    }
    #[cfg(not(feature = "parallel"))]
    {
        evaluate_offspring_seq(raw, k, g, t, bounds)
    }
}

/// Assign ranks and crowding, then truncate to `target` by (rank, crowding).
fn environmental_selection(mut pop: Vec<Individual>, target: usize) -> Vec<Individual> {
    let fronts = nondominated_sort(&pop);
    for (rank, front) in fronts.iter().enumerate() {
        let refs: Vec<&Individual> = front.iter().map(|&i| &pop[i]).collect();
        let crowd = crowding_distance(&refs);
        for (&idx, &c) in front.iter().zip(crowd.iter()) {
            pop[idx].rank = rank;
            pop[idx].crowding = c;
        }
    }
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| {
        pop[a]
            .rank
            .cmp(&pop[b].rank)
            .then(pop[b].crowding.partial_cmp(&pop[a].crowding).unwrap())
            .then(a.cmp(&b))
    });
    order.truncate(target);
    order.sort_unstable();
    let mut keep: Vec<Individual> = Vec::with_capacity(target);
    let mut taken = vec![false; pop.len()];
    for idx in order {
        taken[idx] = true;
    }
    for (idx, ind) in pop.into_iter().enumerate() {
        if taken[idx] {
            keep.push(ind);
        }
    }
    keep
}

/// Run the NSGA-II search and pick the final partition.
///
/// The initial population seeds individual 0 with the plane-major uniform
/// partition and fills the rest with mutated copies; selection is elitist
/// (mu + lambda), so the returned partition never loses to the uniform seed
/// on both objectives simultaneously.
pub fn run_nsga2(
    g: &SatGraph,
    t: &TrafficMatrix,
    k: usize,
    cfg: &Nsga2Config,
    seed: u64,
) -> Result<Nsga2Result> {
    let n = g.num_nodes();
    cfg.validate(n, k)?;
    let bounds = cfg.bounds(n, k);
    let mut master = rng::stream_rng(seed, 0x4e53_4741);

    // Seed population: the uniform orbital partition plus mutated variants.
    let uniform = DomainPartition::uniform_plane_major(n, k);
    let mut raw_init: Vec<Vec<usize>> = vec![uniform.labels().to_vec()];
    for _ in 1..cfg.population {
        let mut part = uniform.clone();
        for _ in 0..2 * n {
            part = variation::mutate_raw(&part, g, t, &mut master).0;
        }
        raw_init.push(part.labels().to_vec());
    }
    let mut pop = evaluate_offspring(raw_init, k, g, t, bounds)?;
    pop = environmental_selection(pop, cfg.population);

    let mut history = Vec::with_capacity(cfg.generations + 1);
    let record = |pop: &[Individual]| GenerationStats {
        best_idtr: pop.iter().map(|i| i.idtr).fold(f64::NEG_INFINITY, f64::max),
        best_sigma_l: pop.iter().map(|i| i.sigma_l).fold(f64::INFINITY, f64::min),
    };
    history.push(record(&pop));

    for _ in 0..cfg.generations {
        // Variation is sequential (it owns the rng); repair + evaluation of
        // the offspring batch is the data-parallel section.
        let mut raw: Vec<Vec<usize>> = Vec::with_capacity(cfg.population);
        while raw.len() < cfg.population {
            let p1 = tournament_pick(&pop, cfg.tournament, &mut master);
            let p2 = tournament_pick(&pop, cfg.tournament, &mut master);
            let (mut c1, mut c2) = if master.gen::<f64>() < cfg.crossover_prob {
                variation::crossover_raw(
                    p1.partition.labels(),
                    p2.partition.labels(),
                    &mut master,
                )
            } else {
                (p1.partition.labels().to_vec(), p2.partition.labels().to_vec())
            };
            for child in [&mut c1, &mut c2] {
                if master.gen::<f64>() < cfg.mutation_prob {
                    let part = DomainPartition::from_labels(std::mem::take(child), k)?;
                    let (mutated, _) = variation::mutate_raw(&part, g, t, &mut master);
                    *child = mutated.into_labels();
                }
            }
            raw.push(c1);
            if raw.len() < cfg.population {
                raw.push(c2);
            }
        }
        let offspring = evaluate_offspring(raw, k, g, t, bounds)?;
        debug_assert!(offspring
            .iter()
            .all(|ind| ind.partition.is_valid(g, bounds)));
        pop.extend(offspring);
        pop = environmental_selection(pop, cfg.population);
        history.push(record(&pop));
    }

    let front: Vec<Individual> = pop.iter().filter(|i| i.rank == 0).cloned().collect();
    let (selected, normalization) = select_final(&front);
    Ok(Nsga2Result {
        pareto_front: front,
        selected,
        history,
        normalization,
    })
}

/// Pick the final partition from a Pareto front by equal-weight min-max
/// normalized score; ties break toward higher IDTR, then lexicographically
/// smaller label vector.
pub fn select_final(front: &[Individual]) -> (Individual, ScoreNormalization) {
    assert!(!front.is_empty(), "front must be non-empty");
    let idtr_min = front.iter().map(|i| i.idtr).fold(f64::INFINITY, f64::min);
    let idtr_max = front.iter().map(|i| i.idtr).fold(f64::NEG_INFINITY, f64::max);
    let sigma_min = front.iter().map(|i| i.sigma_l).fold(f64::INFINITY, f64::min);
    let sigma_max = front
        .iter()
        .map(|i| i.sigma_l)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64, lo: f64, hi: f64| {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    };
    let mut best: Option<(&Individual, f64)> = None;
    for ind in front {
        let score = 0.5 * norm(ind.idtr, idtr_min, idtr_max)
            + 0.5 * (1.0 - norm(ind.sigma_l, sigma_min, sigma_max));
        let replace = match best {
            None => true,
            Some((cur, cur_score)) => {
                score > cur_score
                    || (score == cur_score
                        && (ind.idtr > cur.idtr
                            || (ind.idtr == cur.idtr
                                && ind.partition.labels() < cur.partition.labels())))
            }
        };
        if replace {
            best = Some((ind, score));
        }
    }
    (
        best.unwrap().0.clone(),
        ScoreNormalization {
            idtr_min,
            idtr_max,
            sigma_min,
            sigma_max,
        },
    )
}
