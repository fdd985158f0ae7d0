use super::schedule::NoiseSchedule;
use crate::numeric::{RngState, Scalar, Tensor};

/// `n` independent timesteps, uniform on `1..=T`.
pub fn sample_per_node(n: usize, schedule: &NoiseSchedule, rng: &mut RngState) -> Vec<usize> {
    (0..n).map(|_| 1 + rng.uniform_int(schedule.steps() as u64) as usize).collect()
}

/// One timestep per graph, broadcast to that graph's nodes.
pub fn sample_per_graph(graph_id: &[usize], graphs: usize, schedule: &NoiseSchedule, rng: &mut RngState) -> Vec<usize> {
    let per_graph = sample_per_node(graphs, schedule, rng);
    graph_id.iter().map(|&g| per_graph[g]).collect()
}

#[derive(Debug, Clone)]
pub struct NoisySample<S> {
    pub x0: Tensor<S>,
    pub t: Vec<usize>,
    pub eps: Tensor<S>,
    pub xt: Tensor<S>,
}

/// `x_t = alpha_t x_0 + sigma_t eps`, row by row.
pub fn noise_with<S: Scalar>(x0: &Tensor<S>, t: &[usize], eps: Tensor<S>, schedule: &NoiseSchedule) -> NoisySample<S> {
    assert_eq!(t.len(), x0.rows(), "one timestep per row");
    assert_eq!(eps.shape(), x0.shape(), "noise shape");
    let mut xt = Tensor::zeros(x0.rows(), x0.cols());
    for (r, &tr) in t.iter().enumerate() {
        let (a, s) = (S::from_f64(schedule.alpha(tr)), S::from_f64(schedule.sigma(tr)));
        for ((o, &x), &e) in xt.row_mut(r).iter_mut().zip(x0.row(r)).zip(eps.row(r)) {
            *o = a * x + s * e;
        }
    }
    NoisySample { x0: x0.clone(), t: t.to_vec(), eps, xt }
}

pub fn noise<S: Scalar>(x0: &Tensor<S>, t: &[usize], schedule: &NoiseSchedule, rng: &mut RngState) -> NoisySample<S> {
    let eps = rng.normal_tensor(x0.rows(), x0.cols());
    noise_with(x0, t, eps, schedule)
}
