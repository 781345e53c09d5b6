//! Maximum spanning forest (Kruskal with union–find).

use alloc::vec::Vec;

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: alloc::vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            core::cmp::Ordering::Less => self.parent[ra] = rb,
            core::cmp::Ordering::Greater => self.parent[rb] = ra,
            core::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Edges of a maximum-weight spanning forest over nodes `0..n`.
///
/// Heavier edges are taken first; equal weights fall back to `(u, v)` order,
/// so the result is deterministic.
pub fn maximum_spanning_forest(n: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut sorted: Vec<(usize, usize, f64)> = edges.to_vec();
    sorted.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut sets = DisjointSet::new(n);
    let mut forest = Vec::with_capacity(n.saturating_sub(1));
    for (u, v, w) in sorted {
        if u != v && sets.union(u, v) {
            forest.push((u, v, w));
        }
    }
    forest
}
