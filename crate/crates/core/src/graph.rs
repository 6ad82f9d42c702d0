//! Random graph generators used to build sparse precision matrices.

use std::collections::BTreeSet;

use rand::Rng;

/// Undirected simple graph on `0..n`, edges stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph { n, edges: BTreeSet::new() }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        assert!(a < self.n && b < self.n && a != b, "bad edge ({a},{b}) for n={}", self.n);
        self.edges.insert((a.min(b), a.max(b)))
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) -> bool {
        self.edges.remove(&(a.min(b), a.max(b)))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    /// True when every node can reach node 0.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for (a, b) in self.edges() {
                let w = if a == v { b } else if b == v { a } else { continue };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Watts-Strogatz small world: a ring where each node links to its
/// `per_side` nearest neighbours on each side, then every lattice edge
/// `(u, u+j)` is rewired to `(u, w)` with probability `rewire_prob`, `w`
/// uniform among nodes that are neither `u` nor already adjacent to it.
pub fn watts_strogatz<R: Rng + ?Sized>(
    n: usize,
    per_side: usize,
    rewire_prob: f64,
    rng: &mut R,
) -> Graph {
    let mut g = Graph::empty(n);
    if n < 2 {
        return g;
    }
    for j in 1..=per_side {
        for u in 0..n {
            let v = (u + j) % n;
            if u != v {
                g.add_edge(u, v);
            }
        }
    }
    for j in 1..=per_side {
        for u in 0..n {
            let v = (u + j) % n;
            if u == v || !g.has_edge(u, v) {
                continue;
            }
            if rng.random::<f64>() < rewire_prob {
                let candidates: Vec<usize> =
                    (0..n).filter(|&w| w != u && !g.has_edge(u, w)).collect();
                if candidates.is_empty() {
                    continue;
                }
                let w = candidates[rng.random_range(0..candidates.len())];
                g.remove_edge(u, v);
                g.add_edge(u, w);
            }
        }
    }
    g
}

/// Uniform spanning tree of the complete graph `K_n` by Wilson's algorithm:
/// loop-erased random walks from each node not yet in the tree until they hit it.
pub fn wilson_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Graph {
    let mut g = Graph::empty(n);
    if n < 2 {
        return g;
    }
    let mut in_tree = vec![false; n];
    let mut next = vec![usize::MAX; n];
    in_tree[rng.random_range(0..n)] = true;
    for start in 0..n {
        let mut u = start;
        // The successor map overwrites earlier exits, which erases loops.
        while !in_tree[u] {
            let mut w = rng.random_range(0..n - 1);
            if w >= u {
                w += 1;
            }
            next[u] = w;
            u = w;
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            g.add_edge(u, next[u]);
            u = next[u];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn ring_without_rewiring() {
        let mut rng = stream(&[1]);
        let g = watts_strogatz(6, 1, 0.0, &mut rng);
        assert_eq!(g.edge_count(), 6);
        assert!((0..6).all(|v| g.degree(v) == 2));
        assert!(g.has_edge(5, 0));
    }

    #[test]
    fn rewiring_keeps_edge_count() {
        for seed in 0..50 {
            let mut rng = stream(&[seed]);
            let g = watts_strogatz(10, 1, 0.5, &mut rng);
            assert_eq!(g.edge_count(), 10);
        }
    }

    #[test]
    fn wilson_gives_spanning_trees() {
        for seed in 0..100 {
            let mut rng = stream(&[seed]);
            let n = 2 + (seed as usize % 9);
            let g = wilson_tree(n, &mut rng);
            assert_eq!(g.edge_count(), n - 1);
            assert!(g.is_connected());
        }
    }

    #[test]
    fn wilson_is_uniform_on_k3() {
        // K_3 has three spanning trees (paths), each with probability 1/3.
        let mut counts = [0usize; 3];
        for seed in 0..6000 {
            let mut rng = stream(&[77, seed]);
            let g = wilson_tree(3, &mut rng);
            let missing = [(1, 2), (0, 2), (0, 1)]
                .iter()
                .position(|&(a, b)| !g.has_edge(a, b))
                .unwrap();
            counts[missing] += 1;
        }
        for c in counts {
            assert!((c as f64 / 6000.0 - 1.0 / 3.0).abs() < 0.025, "{counts:?}");
        }
    }
}
