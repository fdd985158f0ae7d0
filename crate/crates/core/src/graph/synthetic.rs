//! Seeded synthetic datasets for tests and smoke runs.

use serde::{Deserialize, Serialize};

use super::csr::Csr;
use super::{Graph, Split};
use crate::numeric::{RngState, Tensor};

/// Erdos-Renyi graph on `n` nodes with edge probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut RngState) -> Csr {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    Csr::from_edges(n, &edges).expect("indices in range").0
}

/// Stochastic block model with class-dependent Gaussian features.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedPartition {
    pub n: usize,
    pub classes: usize,
    pub d: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Scale of the class mean relative to unit feature noise.
    pub signal: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            n: 300,
            classes: 3,
            d: 16,
            p_in: 0.05,
            p_out: 0.005,
            signal: 0.6,
            train_per_class: 20,
            val_per_class: 30,
        }
    }
}

impl PlantedPartition {
    pub fn generate(&self, rng: &mut RngState) -> Graph {
        let labels: Vec<usize> = (0..self.n).map(|i| i % self.classes).collect();
        let means = rng.normal_tensor::<f64>(self.classes, self.d);
        let x = Tensor::from_fn(self.n, self.d, |r, c| self.signal * means.get(labels[r], c) + rng.normal());
        let mut edges = Vec::new();
        for u in 0..self.n {
            for v in (u + 1)..self.n {
                let p = if labels[u] == labels[v] { self.p_in } else { self.p_out };
                if rng.bernoulli(p) {
                    edges.push((u, v));
                }
            }
        }
        let adj = Csr::from_edges(self.n, &edges).expect("indices in range").0;
        let mut order: Vec<usize> = (0..self.n).collect();
        rng.shuffle(&mut order);
        let mut split = vec![Some(Split::Test); self.n];
        let mut taken = vec![(0usize, 0usize); self.classes];
        for &v in &order {
            let t = &mut taken[labels[v]];
            if t.0 < self.train_per_class {
                split[v] = Some(Split::Train);
                t.0 += 1;
            } else if t.1 < self.val_per_class {
                split[v] = Some(Split::Val);
                t.1 += 1;
            }
        }
        let mut g = Graph::new(x, adj);
        g.node_labels = Some(labels);
        g.split = Some(split);
        g
    }
}

/// Two-class graph dataset: class 0 are rings with a few chords, class 1 are
/// random trees with the same number of extra edges. Features are empty.
pub fn rings_and_trees(count: usize, min_nodes: usize, max_nodes: usize, rng: &mut RngState) -> Vec<Graph> {
    assert!(min_nodes >= 3 && max_nodes >= min_nodes);
    (0..count)
        .map(|i| {
            let label = i % 2;
            let n = min_nodes + rng.uniform_int((max_nodes - min_nodes + 1) as u64) as usize;
            let mut edges: Vec<(usize, usize)> = if label == 0 {
                (0..n).map(|v| (v, (v + 1) % n)).collect()
            } else {
                (1..n).map(|v| (rng.uniform_int(v as u64) as usize, v)).collect()
            };
            for _ in 0..2 {
                let u = rng.uniform_int(n as u64) as usize;
                let v = rng.uniform_int(n as u64) as usize;
                edges.push((u, v));
            }
            let adj = Csr::from_edges(n, &edges).expect("indices in range").0;
            let mut g = Graph::new(Tensor::zeros(n, 0), adj);
            g.graph_label = Some(label);
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_partition_is_valid_and_split_sized() {
        let g = PlantedPartition::default().generate(&mut RngState::new(1));
        g.validate().unwrap();
        assert_eq!(g.split_nodes(Split::Train).len(), 60);
        assert_eq!(g.split_nodes(Split::Val).len(), 90);
    }

    #[test]
    fn rings_and_trees_alternate_labels() {
        let gs = rings_and_trees(6, 5, 9, &mut RngState::new(2));
        assert_eq!(gs.iter().map(|g| g.graph_label.unwrap()).collect::<Vec<_>>(), vec![0, 1, 0, 1, 0, 1]);
        assert!(gs.iter().all(|g| (5..=9).contains(&g.n())));
    }
}
