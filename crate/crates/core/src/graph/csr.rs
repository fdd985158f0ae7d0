use std::sync::Arc;

use super::GraphError;

/// Undirected adjacency in compressed sparse row form. Each undirected edge
/// occupies two slots; neighbor lists are sorted and free of self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Arc<[usize]>,
    indices: Arc<[usize]>,
}

/// Counts of input pairs dropped while building a [`Csr`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

/// Attention neighborhoods `N(v) + {v}` as an edge list grouped by target.
#[derive(Debug, Clone)]
pub struct AttentionIndex {
    pub offsets: Arc<[usize]>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl Csr {
    pub fn empty(n: usize) -> Self {
        Self { offsets: vec![0; n + 1].into(), indices: Vec::new().into() }
    }

    /// Symmetrizes `edges`, dropping self-loops and duplicate pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<(Self, EdgeCleanup), GraphError> {
        let mut cleanup = EdgeCleanup::default();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(GraphError::NodeRange { index: x, n });
                }
            }
            if u == v {
                cleanup.self_loops += 1;
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            let before = list.len();
            list.dedup();
            cleanup.duplicates += before - list.len();
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        // Each duplicated undirected pair removes two slots.
        cleanup.duplicates /= 2;
        Ok((Self { offsets: offsets.into(), indices: indices.into() }, cleanup))
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of stored directed slots (twice the undirected edge count).
    pub fn edge_slots(&self) -> usize {
        self.indices.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    pub fn indices(&self) -> &Arc<[usize]> {
        &self.indices
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_slots() / 2);
        for u in 0..self.n() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n()).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }

    pub fn attention_index(&self) -> AttentionIndex {
        let n = self.n();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut src = Vec::with_capacity(self.edge_slots() + n);
        let mut dst = Vec::with_capacity(self.edge_slots() + n);
        offsets.push(0);
        for v in 0..n {
            src.push(v);
            dst.push(v);
            for &u in self.neighbors(v) {
                src.push(u);
                dst.push(v);
            }
            offsets.push(src.len());
        }
        AttentionIndex { offsets: offsets.into(), src: src.into(), dst: dst.into() }
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<_> = self.undirected_edges().into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
        Self::from_edges(self.n(), &edges).expect("permutation stays in range").0
    }
}
