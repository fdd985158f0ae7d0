//! CSV dataset directories.
//!
//! Node datasets: `nodes.csv` (`node_id,feat_0..feat_{d-1}[,label]`),
//! `edges.csv` (`src,dst`) and `splits.csv` (`node_id,split`).
//! Graph datasets: `graphs.csv` (`graph_id,label[,num_nodes]`) and
//! `graph_edges.csv` (`graph_id,src,dst` with per-graph local indices).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;

use super::csr::Csr;
use super::features::standardize_columns;
use super::{Graph, GraphError, Split};
use crate::numeric::Tensor;

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: PathBuf) -> Result<Self, GraphError> {
        if !path.is_file() {
            return Err(GraphError::MissingFile(path));
        }
        let format = |e: csv::Error| GraphError::Format { path: path.clone(), msg: e.to_string() };
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(&path).map_err(format)?;
        let headers = rdr.headers().map_err(format)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(format)?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { path, headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize, GraphError> {
        self.column(name)
            .ok_or_else(|| GraphError::Format { path: self.path.clone(), msg: format!("missing column `{name}`") })
    }

    fn parse<T: std::str::FromStr>(&self, line: u64, row: &[String], col: usize) -> Result<T, GraphError> {
        let cell = row.get(col).map(String::as_str).unwrap_or("");
        cell.parse().map_err(|_| GraphError::NonNumeric {
            path: self.path.clone(),
            line,
            column: self.headers[col].clone(),
            value: cell.to_string(),
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), GraphError> {
    std::fs::write(path, text).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

fn remap_labels(raw: &[i64]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<i64> = raw.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let map: BTreeMap<i64, usize> = uniq.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (raw.iter().map(|v| map[v]).collect(), uniq.len())
}

fn report_cleanup(path: &Path, self_loops: usize, duplicates: usize) {
    if self_loops > 0 {
        warn!("{}: dropped {self_loops} self-loop(s)", path.display());
    }
    if duplicates > 0 {
        warn!("{}: removed {duplicates} duplicate edge(s)", path.display());
    }
}

/// Reads a node dataset without any feature preprocessing. `splits.csv` is
/// optional; without it no node carries a split flag.
pub fn read_node_dataset(dir: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let dir = dir.as_ref();
    let nodes = Table::read(dir.join("nodes.csv"))?;
    let id_col = nodes.require("node_id")?;
    let label_col = nodes.column("label");
    let mut feat_cols = Vec::new();
    for k in 0.. {
        match nodes.column(&format!("feat_{k}")) {
            Some(c) => feat_cols.push(c),
            None => break,
        }
    }
    let n = nodes.rows.len();
    let d = feat_cols.len();
    let mut x = Tensor::zeros(n, d);
    let mut seen = vec![false; n];
    let mut labels = vec![0i64; n];
    for (line, row) in &nodes.rows {
        let id: usize = nodes.parse(*line, row, id_col)?;
        if id >= n {
            return Err(GraphError::NodeRangeAt { path: nodes.path.clone(), line: *line, index: id, n });
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(GraphError::Format { path: nodes.path.clone(), msg: format!("node {id} listed twice") });
        }
        for (k, &c) in feat_cols.iter().enumerate() {
            x.set(id, k, nodes.parse(*line, row, c)?);
        }
        if let Some(c) = label_col {
            labels[id] = nodes.parse(*line, row, c)?;
        }
    }

    let edges = Table::read(dir.join("edges.csv"))?;
    let (sc, dc) = (edges.require("src")?, edges.require("dst")?);
    let mut pairs = Vec::with_capacity(edges.rows.len());
    for (line, row) in &edges.rows {
        let (u, v): (usize, usize) = (edges.parse(*line, row, sc)?, edges.parse(*line, row, dc)?);
        for idx in [u, v] {
            if idx >= n {
                return Err(GraphError::NodeRangeAt { path: edges.path.clone(), line: *line, index: idx, n });
            }
        }
        pairs.push((u, v));
    }
    let (adj, cleanup) = Csr::from_edges(n, &pairs)?;
    report_cleanup(&edges.path, cleanup.self_loops, cleanup.duplicates);

    let mut graph = Graph::new(x, adj);
    if label_col.is_some() {
        graph.node_labels = Some(remap_labels(&labels).0);
    }
    let split_path = dir.join("splits.csv");
    if split_path.is_file() {
        let splits = Table::read(split_path)?;
        let (ic, sc) = (splits.require("node_id")?, splits.require("split")?);
        let mut flags = vec![None; n];
        for (line, row) in &splits.rows {
            let id: usize = splits.parse(*line, row, ic)?;
            if id >= n {
                return Err(GraphError::NodeRangeAt { path: splits.path.clone(), line: *line, index: id, n });
            }
            let s = Split::parse(&row[sc]).ok_or_else(|| GraphError::Format {
                path: splits.path.clone(),
                msg: format!("line {line}: unknown split `{}`", row[sc]),
            })?;
            flags[id] = Some(s);
        }
        graph.split = Some(flags);
    }
    Ok(graph)
}

/// Reads a node dataset and standardizes every feature column with the
/// mean and standard deviation of the training nodes (all nodes when the
/// dataset has no training split).
pub fn load_node_dataset(dir: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let mut graph = read_node_dataset(dir)?;
    let mut rows = graph.split_nodes(Split::Train);
    if rows.is_empty() {
        rows = (0..graph.n()).collect();
    }
    graph.x = standardize_columns(&graph.x, &rows);
    graph.validate()?;
    Ok(graph)
}

pub fn write_node_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| GraphError::Io { path: dir.to_path_buf(), source })?;
    let mut s = String::from("node_id");
    for k in 0..graph.d() {
        s.push_str(&format!(",feat_{k}"));
    }
    if graph.node_labels.is_some() {
        s.push_str(",label");
    }
    s.push('\n');
    for i in 0..graph.n() {
        s.push_str(&i.to_string());
        for v in graph.x.row(i) {
            s.push_str(&format!(",{v}"));
        }
        if let Some(l) = &graph.node_labels {
            s.push_str(&format!(",{}", l[i]));
        }
        s.push('\n');
    }
    write_file(&dir.join("nodes.csv"), &s)?;

    let mut s = String::from("src,dst\n");
    for (u, v) in graph.adj.undirected_edges() {
        s.push_str(&format!("{u},{v}\n"));
    }
    write_file(&dir.join("edges.csv"), &s)?;

    if let Some(split) = &graph.split {
        let mut s = String::from("node_id,split\n");
        for (i, f) in split.iter().enumerate() {
            if let Some(f) = f {
                s.push_str(&format!("{i},{}\n", f.name()));
            }
        }
        write_file(&dir.join("splits.csv"), &s)?;
    }
    Ok(())
}

/// Reads a graph-classification dataset. Graph ids must be `0..B`. Node
/// counts come from the optional `num_nodes` column, else from the largest
/// local index seen in `graph_edges.csv`. Features are empty (`n x 0`).
pub fn read_graph_dataset(dir: impl AsRef<Path>) -> Result<Vec<Graph>, GraphError> {
    let dir = dir.as_ref();
    let graphs = Table::read(dir.join("graphs.csv"))?;
    let (gc, lc) = (graphs.require("graph_id")?, graphs.require("label")?);
    let nc = graphs.column("num_nodes");
    let b = graphs.rows.len();
    if b == 0 {
        return Err(GraphError::Format { path: graphs.path.clone(), msg: "no graphs".into() });
    }
    let mut raw_labels = vec![0i64; b];
    let mut declared: Vec<Option<usize>> = vec![None; b];
    let mut seen = vec![false; b];
    for (line, row) in &graphs.rows {
        let g: usize = graphs.parse(*line, row, gc)?;
        if g >= b || std::mem::replace(&mut seen[g], true) {
            return Err(GraphError::Format {
                path: graphs.path.clone(),
                msg: format!("line {line}: graph ids must be distinct and contiguous from 0, got {g}"),
            });
        }
        raw_labels[g] = graphs.parse(*line, row, lc)?;
        if let Some(c) = nc {
            declared[g] = Some(graphs.parse(*line, row, c)?);
        }
    }

    let edges = Table::read(dir.join("graph_edges.csv"))?;
    let (gc, sc, dc) = (edges.require("graph_id")?, edges.require("src")?, edges.require("dst")?);
    let mut per_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); b];
    for (line, row) in &edges.rows {
        let g: usize = edges.parse(*line, row, gc)?;
        if g >= b {
            return Err(GraphError::Format {
                path: edges.path.clone(),
                msg: format!("line {line}: unknown graph id {g}"),
            });
        }
        let (u, v): (usize, usize) = (edges.parse(*line, row, sc)?, edges.parse(*line, row, dc)?);
        if let Some(n) = declared[g] {
            for idx in [u, v] {
                if idx >= n {
                    return Err(GraphError::NodeRangeAt { path: edges.path.clone(), line: *line, index: idx, n });
                }
            }
        }
        per_graph[g].push((u, v));
    }

    let (labels, _) = remap_labels(&raw_labels);
    let mut out = Vec::with_capacity(b);
    let (mut loops, mut dups) = (0, 0);
    for (g, pairs) in per_graph.iter().enumerate() {
        let n = declared[g].unwrap_or_else(|| pairs.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0));
        if n == 0 {
            return Err(GraphError::EmptyGraph(g));
        }
        let (adj, c) = Csr::from_edges(n, pairs)?;
        loops += c.self_loops;
        dups += c.duplicates;
        let mut graph = Graph::new(Tensor::zeros(n, 0), adj);
        graph.graph_label = Some(labels[g]);
        out.push(graph);
    }
    report_cleanup(&edges.path, loops, dups);
    Ok(out)
}

/// Reads a graph dataset and attaches one-hot degree features capped at
/// `cap` (default: the dataset's maximum degree).
pub fn load_graph_dataset(dir: impl AsRef<Path>, cap: Option<usize>) -> Result<Vec<Graph>, GraphError> {
    let graphs = read_graph_dataset(dir)?;
    let cap = cap.unwrap_or_else(|| super::max_degree(&graphs)).max(1);
    Ok(super::degree_onehot(&graphs, cap))
}

pub fn write_graph_dataset(graphs: &[Graph], dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| GraphError::Io { path: dir.to_path_buf(), source })?;
    let mut s = String::from("graph_id,label,num_nodes\n");
    for (g, graph) in graphs.iter().enumerate() {
        let label = graph.graph_label.ok_or_else(|| GraphError::Invalid(format!("graph {g} has no label")))?;
        s.push_str(&format!("{g},{label},{}\n", graph.n()));
    }
    write_file(&dir.join("graphs.csv"), &s)?;
    let mut s = String::from("graph_id,src,dst\n");
    for (g, graph) in graphs.iter().enumerate() {
        for (u, v) in graph.adj.undirected_edges() {
            s.push_str(&format!("{g},{u},{v}\n"));
        }
    }
    write_file(&dir.join("graph_edges.csv"), &s)
}
