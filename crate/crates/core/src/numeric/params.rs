//! Named parameter storage and binding onto a tape.

use sha2::{Digest, Sha256};

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NumericError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Option<Tensor<S>>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter. Names must be unique within a store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param { name, value, grad: None });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }

    /// Binds every parameter as an untracked constant.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }

    /// Copies gradients from the tape; unreachable parameters get `None`.
    pub fn collect_grads(&mut self, tape: &Tape<S>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.grad = tape.grad(v).cloned();
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Replaces all values, checking names and shapes against `other`.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<S>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(NumericError::Invalid(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, value)) in self.params.iter().zip(&values) {
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(NumericError::Invalid(format!(
                    "parameter mismatch: expected `{}` {:?}, got `{}` {:?}",
                    p.name,
                    p.value.shape(),
                    name,
                    value.shape()
                )));
            }
        }
        for (p, (_, value)) in self.params.iter_mut().zip(values) {
            p.value = value;
            p.grad = None;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            buf.clear();
            p.value.data().iter().for_each(|v| v.write_le(&mut buf));
            h.update(&buf);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_collect_round_trip() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_f64(1, 2, &[2.0, -1.0]).unwrap());
        let unused = store.add("unused", Tensor::zeros(1, 1));
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let sq = tape.mul(b.var(w), b.var(w)).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        store.collect_grads(&tape, &b);
        assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[4.0, -2.0]);
        assert!(store.get(unused).grad.is_none());
    }

    #[test]
    fn digest_tracks_values() {
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", Tensor::zeros(2, 2));
        let before = store.digest();
        assert_eq!(before, store.clone().digest());
        store.value_mut(w).set(0, 0, 1.0);
        assert_ne!(before, store.digest());
    }
}
