//! Greedy minimum-degree elimination ordering on the variable graph.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

/// Returns a permutation `order` where `order[k]` is the variable eliminated
/// k-th. Ties are broken by the lower variable index, so the result is
/// deterministic.
pub(crate) fn minimum_degree(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &a in &nbrs {
            heap.push(Reverse((adj[a].len(), a)));
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_is_complete() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4)];
        let mut order = minimum_degree(6, &edges);
        assert_eq!(&order[..2], &[5, 4]);
        order.sort();
        assert_eq!(order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn hub_goes_last() {
        // star: 0 connected to all others
        let edges: Vec<_> = (1..10).map(|i| (0, i)).collect();
        let order = minimum_degree(10, &edges);
        assert!(order[..8].iter().all(|&v| v != 0));
    }
}
