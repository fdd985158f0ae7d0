use crate::nn::{Init, Linear, Prelu, Result, Structure};
use crate::numeric::{Bound, ParamId, ParamStore, RngState, Scalar, Tape, Tensor, Var};

/// `MLP((1 + eps) h_v + sum_{u in N(v)} h_u)` with a two-layer PReLU MLP.
#[derive(Debug, Clone)]
pub struct GinLayer {
    pub eps: ParamId,
    pub lin1: Linear,
    pub act: Prelu,
    pub lin2: Linear,
}

impl GinLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        let eps = store.add(format!("{name}.eps"), Tensor::zeros(1, 1));
        let lin1 = Linear::new(store, &format!("{name}.mlp.0"), in_dim, hidden, true, Init::FanIn, rng);
        let act = Prelu::new(store, &format!("{name}.mlp.act"));
        let lin2 = Linear::new(store, &format!("{name}.mlp.1"), hidden, out_dim, true, Init::FanIn, rng);
        Self { eps, lin1, act, lin2 }
    }

    pub fn out_dim(&self) -> usize {
        self.lin2.out_dim
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, s: &Structure, h: Var) -> Result<Var> {
        let agg = tape.spmm_sum(h, s.nbr_offsets.clone(), s.nbr_indices.clone())?;
        let scaled = tape.scale_var(h, bound.var(self.eps))?;
        let ego = tape.add(h, scaled)?;
        let pre = tape.add(ego, agg)?;
        let z = self.lin1.forward(tape, bound, pre)?;
        let z = self.act.forward(tape, bound, z)?;
        self.lin2.forward(tape, bound, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Csr, Graph};

    #[test]
    fn isolated_nodes_with_equal_features_match_the_mlp() {
        let mut rng = RngState::new(2);
        let mut store = ParamStore::<f64>::new();
        let layer = GinLayer::new(&mut store, "gin", 2, 4, 3, &mut rng);
        let x = Tensor::from_f64(4, 2, &[0.3, -0.7, 1.0, 2.0, 0.3, -0.7, 5.0, 1.0]).unwrap();
        let g = Graph::new(x.clone(), Csr::from_edges(4, &[(1, 3)]).unwrap().0);
        let s = Structure::from_graph(&g);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = layer.forward(&mut tape, &b, &s, xv).unwrap();
        let y = tape.value(out).clone();
        assert_eq!(y.row(0), y.row(2));

        let mut tape2 = Tape::new();
        let b2 = store.bind(&mut tape2);
        let x0 = tape2.constant(x.select_rows(&[0]));
        let z = layer.lin1.forward(&mut tape2, &b2, x0).unwrap();
        let z = layer.act.forward(&mut tape2, &b2, z).unwrap();
        let z = layer.lin2.forward(&mut tape2, &b2, z).unwrap();
        assert_eq!(tape2.value(z).row(0), y.row(0));
    }
}
