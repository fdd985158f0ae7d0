use super::Graph;
use crate::numeric::Tensor;

pub fn max_degree(graphs: &[Graph]) -> usize {
    graphs.iter().map(|g| g.adj.max_degree()).max().unwrap_or(0)
}

/// Replaces features by a one-hot of `min(degree, cap)`; width is `cap + 1`.
pub fn degree_onehot(graphs: &[Graph], cap: usize) -> Vec<Graph> {
    assert!(cap >= 1, "degree cap must be at least 1");
    graphs
        .iter()
        .map(|g| {
            let mut x = Tensor::zeros(g.n(), cap + 1);
            for v in 0..g.n() {
                x.set(v, g.adj.degree(v).min(cap), 1.0);
            }
            Graph { x, ..g.clone() }
        })
        .collect()
}

/// Column-wise `(x - mean) / std` with statistics over `rows`; constant
/// columns are guarded by adding 1e-8 to the standard deviation.
pub fn standardize_columns(x: &Tensor<f64>, rows: &[usize]) -> Tensor<f64> {
    let d = x.cols();
    let k = rows.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; d];
    for &r in rows {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var.iter().map(|s| 1.0 / ((s / k).sqrt() + 1e-8)).collect();
    Tensor::from_fn(x.rows(), d, |r, c| (x.get(r, c) - mean[c]) * scale[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Csr;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(Tensor::zeros(n, 0), Csr::from_edges(n, edges).unwrap().0)
    }

    #[test]
    fn triangle_rows_hot_at_two() {
        let g = degree_onehot(&[graph(3, &[(0, 1), (1, 2), (2, 0)])], 5).remove(0);
        assert_eq!(g.d(), 6);
        for v in 0..3 {
            assert_eq!(g.x.row(v), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn star_center_is_clamped_and_isolated_node_hot_at_zero() {
        let g = degree_onehot(&[graph(6, &[(0, 1), (0, 2), (0, 3), (0, 4)])], 3).remove(0);
        assert_eq!(g.x.row(0), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.x.row(1), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.x.row(5), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardized_training_rows_have_zero_mean_unit_variance() {
        let x = Tensor::from_f64(4, 2, &[1.0, 5.0, 3.0, 5.0, 5.0, 5.0, 100.0, 0.0]).unwrap();
        let z = standardize_columns(&x, &[0, 1, 2]);
        let col0: Vec<f64> = (0..3).map(|r| z.get(r, 0)).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        assert!((col0.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-7);
        assert_eq!(z.get(0, 1), 0.0);
    }
}
