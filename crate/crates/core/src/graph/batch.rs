use std::sync::Arc;

use super::csr::Csr;
use super::{Graph, GraphError};
use crate::numeric::Tensor;

/// Block-diagonal merge of several graphs. Nodes of graph `g` occupy the
/// contiguous range `offsets[g]..offsets[g + 1]`.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graph: Graph,
    pub graph_id: Arc<[usize]>,
    pub counts: Vec<usize>,
    pub offsets: Arc<[usize]>,
    pub graph_labels: Vec<Option<usize>>,
}

impl GraphBatch {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Recovers the input graphs.
    pub fn split(&self) -> Vec<Graph> {
        (0..self.len())
            .map(|g| {
                let (lo, hi) = (self.offsets[g], self.offsets[g + 1]);
                let edges: Vec<_> = (lo..hi)
                    .flat_map(|u| {
                        self.graph.adj.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u - lo, v - lo))
                    })
                    .collect();
                let rows: Vec<usize> = (lo..hi).collect();
                Graph {
                    x: self.graph.x.select_rows(&rows),
                    adj: Csr::from_edges(hi - lo, &edges).expect("edges stay within the block").0,
                    node_labels: self.graph.node_labels.as_ref().map(|l| l[lo..hi].to_vec()),
                    graph_label: self.graph_labels[g],
                    split: self.graph.split.as_ref().map(|s| s[lo..hi].to_vec()),
                }
            })
            .collect()
    }
}

pub fn batch_graphs(graphs: &[Graph]) -> Result<GraphBatch, GraphError> {
    let first = graphs.first().ok_or_else(|| GraphError::Invalid("cannot batch an empty list".into()))?;
    let d = first.d();
    if let Some(g) = graphs.iter().find(|g| g.d() != d) {
        return Err(GraphError::MixedWidths(d, g.d()));
    }
    let total: usize = graphs.iter().map(Graph::n).sum();
    let mut data = Vec::with_capacity(total * d);
    let mut edges = Vec::new();
    let mut graph_id = Vec::with_capacity(total);
    let mut offsets = vec![0];
    let all_labels = graphs.iter().all(|g| g.node_labels.is_some());
    let all_splits = graphs.iter().all(|g| g.split.is_some());
    let mut node_labels = Vec::new();
    let mut split = Vec::new();
    for (gi, g) in graphs.iter().enumerate() {
        let base = *offsets.last().unwrap();
        data.extend_from_slice(g.x.data());
        edges.extend(g.adj.undirected_edges().into_iter().map(|(u, v)| (u + base, v + base)));
        graph_id.extend(std::iter::repeat(gi).take(g.n()));
        offsets.push(base + g.n());
        if all_labels {
            node_labels.extend_from_slice(g.node_labels.as_ref().unwrap());
        }
        if all_splits {
            split.extend_from_slice(g.split.as_ref().unwrap());
        }
    }
    let x = Tensor::from_vec(total, d, data).expect("row widths agree");
    let mut graph = Graph::new(x, Csr::from_edges(total, &edges)?.0);
    graph.node_labels = all_labels.then_some(node_labels);
    graph.split = all_splits.then_some(split);
    Ok(GraphBatch {
        graph,
        graph_id: graph_id.into(),
        counts: graphs.iter().map(Graph::n).collect(),
        offsets: offsets.into(),
        graph_labels: graphs.iter().map(|g| g.graph_label).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize, label: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        let mut g = Graph::new(Tensor::from_fn(n, 2, |r, c| (r * 2 + c) as f64), Csr::from_edges(n, &edges).unwrap().0);
        g.graph_label = Some(label);
        g
    }

    #[test]
    fn offsets_place_second_graph_after_first() {
        let b = batch_graphs(&[path(3, 0), path(2, 1)]).unwrap();
        assert_eq!(b.graph.n(), 5);
        assert_eq!(&*b.graph_id, &[0, 0, 0, 1, 1]);
        assert!(b.graph.adj.has_edge(3, 4));
        assert_eq!(b.graph.x.row(3), path(2, 1).x.row(0));
    }

    #[test]
    fn single_graph_is_identity_and_split_round_trips() {
        let g = path(4, 1);
        let b = batch_graphs(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.graph.adj, g.adj);
        assert_eq!(b.split(), vec![g]);
    }

    #[test]
    fn mixed_widths_rejected() {
        let mut h = path(2, 0);
        h.x = Tensor::zeros(2, 3);
        assert!(matches!(batch_graphs(&[path(2, 0), h]), Err(GraphError::MixedWidths(2, 3))));
    }
}
