//! Fast non-dominated sorting and crowding distance.

use super::Individual;

/// Fronts of population indices, rank 0 first. Domination maximizes IDTR and
/// minimizes sigma_L.
pub fn nondominated_sort(pop: &[Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut first = Vec::new();

    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            if pop[a].dominates(&pop[b]) {
                dominated_by[a].push(b);
            } else if pop[b].dominates(&pop[a]) {
                domination_count[a] += 1;
            }
        }
        if domination_count[a] == 0 {
            first.push(a);
        }
    }
    fronts.push(first);

    let mut current = 0;
    while !fronts[current].is_empty() {
        let mut next = Vec::new();
        for &a in &fronts[current] {
            for &b in &dominated_by[a] {
                domination_count[b] -= 1;
                if domination_count[b] == 0 {
                    next.push(b);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_unstable();
        fronts.push(next);
        current += 1;
    }
    fronts
}

/// Per-individual crowding distance within one front. Boundary individuals
/// on either objective get +infinity; a zero objective range contributes 0.
pub fn crowding_distance(front: &[&Individual]) -> Vec<f64> {
    let n = front.len();
    if n == 0 {
        return Vec::new();
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0f64; n];
    let objectives: [fn(&Individual) -> f64; 2] = [|i| i.idtr, |i| i.sigma_l];
    for obj in objectives {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| obj(front[a]).partial_cmp(&obj(front[b])).unwrap());
        let lo = obj(front[order[0]]);
        let hi = obj(front[order[n - 1]]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range > 0.0 {
            for w in 1..n - 1 {
                let gap = obj(front[order[w + 1]]) - obj(front[order[w - 1]]);
                dist[order[w]] += gap / range;
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::DomainPartition;

    fn ind(idtr: f64, sigma_l: f64) -> Individual {
        Individual {
            partition: DomainPartition::uniform_plane_major(4, 2),
            idtr,
            sigma_l,
            rank: 0,
            crowding: 0.0,
        }
    }

    #[test]
    fn single_individual_single_front() {
        let pop = vec![ind(0.5, 1.0)];
        assert_eq!(nondominated_sort(&pop), vec![vec![0]]);
    }

    #[test]
    fn dominated_pair_splits_fronts() {
        // a dominates b: higher idtr, lower sigma.
        let pop = vec![ind(0.6, 1.0), ind(0.5, 2.0)];
        assert_eq!(nondominated_sort(&pop), vec![vec![0], vec![1]]);
    }

    #[test]
    fn four_individual_layering() {
        // (0.5,1),(0.6,2),(0.6,1),(0.4,3):
        //   front 0 = {(0.6,1)}, front 1 = {(0.5,1),(0.6,2)}, front 2 = {(0.4,3)}
        let pop = vec![ind(0.5, 1.0), ind(0.6, 2.0), ind(0.6, 1.0), ind(0.4, 3.0)];
        let fronts = nondominated_sort(&pop);
        assert_eq!(fronts, vec![vec![2], vec![0, 1], vec![3]]);
    }

    /// O(n^2) reference: rank = number of peeling iterations until the
    /// individual becomes non-dominated.
    fn brute_force_ranks(pop: &[Individual]) -> Vec<usize> {
        let mut remaining: Vec<usize> = (0..pop.len()).collect();
        let mut rank = vec![0usize; pop.len()];
        let mut level = 0;
        while !remaining.is_empty() {
            let front: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&a| {
                    !remaining
                        .iter()
                        .any(|&b| b != a && pop[b].dominates(&pop[a]))
                })
                .collect();
            for &a in &front {
                rank[a] = level;
            }
            remaining.retain(|i| !front.contains(i));
            level += 1;
        }
        rank
    }

    #[test]
    fn matches_pairwise_brute_force_on_random_populations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=50);
            let pop: Vec<Individual> = (0..n)
                .map(|_| {
                    ind(
                        (rng.gen::<f64>() * 10.0).round() / 10.0,
                        (rng.gen::<f64>() * 10.0).round() / 10.0,
                    )
                })
                .collect();
            let fronts = nondominated_sort(&pop);
            let expect = brute_force_ranks(&pop);
            for (rank, front) in fronts.iter().enumerate() {
                for &i in front {
                    assert_eq!(expect[i], rank);
                }
            }
            let covered: usize = fronts.iter().map(|f| f.len()).sum();
            assert_eq!(covered, n);
        }
    }

    #[test]
    fn crowding_small_fronts_are_infinite() {
        let a = ind(0.1, 1.0);
        let b = ind(0.2, 2.0);
        assert_eq!(crowding_distance(&[&a]), vec![f64::INFINITY]);
        assert_eq!(
            crowding_distance(&[&a, &b]),
            vec![f64::INFINITY, f64::INFINITY]
        );
    }

    #[test]
    fn crowding_equal_spacing_gives_middle_two() {
        // Equally spaced on both objectives: middle gets 1 + 1 = 2.
        let a = ind(0.1, 1.0);
        let b = ind(0.2, 2.0);
        let c = ind(0.3, 3.0);
        let d = crowding_distance(&[&a, &b, &c]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn crowding_degenerate_range_is_zero() {
        let a = ind(0.5, 1.0);
        let b = ind(0.5, 1.0);
        let c = ind(0.5, 1.0);
        let d = crowding_distance(&[&a, &b, &c]);
        assert_eq!(d[1], 0.0);
    }
}
