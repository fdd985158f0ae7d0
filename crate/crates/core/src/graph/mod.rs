//! Graph containers, CSV dataset ingestion, degree features, node masking
//! and block-diagonal batching.

pub mod batch;
pub mod csr;
pub mod features;
pub mod io;
pub mod mask;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::numeric::Tensor;

pub use batch::{batch_graphs, GraphBatch};
pub use csr::{AttentionIndex, Csr, EdgeCleanup};
pub use features::{degree_onehot, max_degree, standardize_columns};
pub use io::{
    load_graph_dataset, load_node_dataset, read_graph_dataset, read_node_dataset, write_graph_dataset,
    write_node_dataset,
};
pub use mask::{mask_nodes, MaskRecord};
pub use synthetic::{random_graph, rings_and_trees, PlantedPartition};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path} line {line}: non-numeric value `{value}` in column `{column}`")]
    NonNumeric { path: PathBuf, line: u64, column: String, value: String },
    #[error("node index {index} out of range for a graph with {n} nodes")]
    NodeRange { index: usize, n: usize },
    #[error("{path} line {line}: node index {index} out of range for a graph with {n} nodes")]
    NodeRangeAt { path: PathBuf, line: u64, index: usize, n: usize },
    #[error("graph {0} has zero nodes")]
    EmptyGraph(usize),
    #[error("mixed feature widths: {0} and {1}")]
    MixedWidths(usize, usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" | "valid" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// An undirected graph with dense node features.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub x: Tensor<f64>,
    pub adj: Csr,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
    pub split: Option<Vec<Option<Split>>>,
}

impl Graph {
    pub fn new(x: Tensor<f64>, adj: Csr) -> Self {
        assert_eq!(x.rows(), adj.n(), "feature rows must equal node count");
        Self { x, adj, node_labels: None, graph_label: None, split: None }
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Node indices assigned to `which`, ascending.
    pub fn split_nodes(&self, which: Split) -> Vec<usize> {
        match &self.split {
            Some(s) => (0..s.len()).filter(|&i| s[i] == Some(which)).collect(),
            None => Vec::new(),
        }
    }

    /// Relabels node `i` as `perm[i]`, moving features, labels and splits.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n());
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        Graph {
            x: self.x.select_rows(&inv),
            adj: self.adj.permuted(perm),
            node_labels: self.node_labels.as_ref().map(|l| inv.iter().map(|&i| l[i]).collect()),
            graph_label: self.graph_label,
            split: self.split.as_ref().map(|s| inv.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.x.rows() != self.n() {
            return Err(GraphError::Invalid(format!(
                "feature rows {} differ from node count {}",
                self.x.rows(),
                self.n()
            )));
        }
        if !self.adj.is_symmetric() {
            return Err(GraphError::Invalid("adjacency is not symmetric".into()));
        }
        if !self.x.is_finite() {
            return Err(GraphError::Invalid("non-finite feature value".into()));
        }
        for (what, len) in
            [("node_labels", self.node_labels.as_ref().map(Vec::len)), ("split", self.split.as_ref().map(Vec::len))]
        {
            if let Some(len) = len {
                if len != self.n() {
                    return Err(GraphError::Invalid(format!("{what} has {len} entries for {} nodes", self.n())));
                }
            }
        }
        Ok(())
    }
}
