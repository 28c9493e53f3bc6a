//! Small undirected-graph helpers shared by the constellation builder, the
//! partition repair operator, and the fault process.

/// Adjacency lists from an undirected edge list over `n` nodes.
pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// BFS hop distances from `src`; `None` marks unreachable nodes.
pub fn bfs_distances(adj: &[Vec<usize>], src: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[src] = Some(0);
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Whether the graph over `n` nodes is connected (empty graphs count as
/// connected only for n <= 1).
pub fn is_connected(n: usize, adj: &[Vec<usize>]) -> bool {
    if n <= 1 {
        return true;
    }
    bfs_distances(adj, 0).iter().all(|d| d.is_some())
}

/// Connected components of the subgraph induced by `nodes`; neighbor lookups
/// go through `adj` but only members of `nodes` are visited. Components come
/// back sorted by node id, largest first (ties: component containing the
/// smallest id first).
pub fn induced_components(nodes: &[usize], adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let member: std::collections::HashSet<usize> = nodes.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut comps = Vec::new();
    let mut sorted_nodes: Vec<usize> = nodes.to_vec();
    sorted_nodes.sort_unstable();
    for &start in &sorted_nodes {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = vec![start];
        seen.insert(start);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if member.contains(&v) && seen.insert(v) {
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfs_on_path() {
        let adj = adjacency(3, &[(0, 1), (1, 2)]);
        assert_eq!(bfs_distances(&adj, 2), vec![Some(2), Some(1), Some(0)]);
    }

    #[test]
    fn components_split_by_induced_set() {
        // 0-1-2-3 path; inducing {0,1,3} splits off node 3.
        let adj = adjacency(4, &[(0, 1), (1, 2), (2, 3)]);
        let comps = induced_components(&[0, 1, 3], &adj);
        assert_eq!(comps, vec![vec![0, 1], vec![3]]);
    }

    #[test]
    fn connectivity() {
        let adj = adjacency(4, &[(0, 1), (2, 3)]);
        assert!(!is_connected(4, &adj));
        let adj = adjacency(4, &[(0, 1), (1, 2), (2, 3)]);
        assert!(is_connected(4, &adj));
    }
}
