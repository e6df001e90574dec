//! Named parameter storage and binding onto a tape.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Grads, Real, Tape, Tensor, Var};

/// Ordered map from parameter name to tensor. Order is the storage order used
/// by the weight file and the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F: Real = f32> {
    tensors: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    /// Inserts a tensor; panics on a duplicate name (a construction bug).
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        let name = name.into();
        assert!(
            self.tensors.insert(name.clone(), t).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.tensors.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Places every tensor on `tape`, as trainable leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Moves gradients for bound parameters into each tensor's `grad`.
    pub fn absorb_grads(&mut self, bound: &Bound, grads: &mut Grads<F>) {
        for (name, t) in self.tensors.iter_mut() {
            t.grad = bound.vars.get(name).and_then(|&v| grads.take(v));
        }
    }
}

/// Parameter name → tape variable for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    /// Looks up a bound parameter. Missing names are construction bugs and
    /// surface as a panic naming the parameter.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Xavier-uniform matrix `[fan_in, fan_out]`.
pub(crate) fn xavier<F: Real>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::lit(rng.gen_range(-a..a)))
}

/// Read-only parameters shared between inference tapes without copying.
#[derive(Debug, Clone, Default)]
pub struct SharedParams<F: Real = f32> {
    tensors: IndexMap<String, Arc<Tensor<F>>>,
}

impl<F: Real> SharedParams<F> {
    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.get(name).map(Arc::as_ref)
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.constant_shared(Arc::clone(t))))
                .collect(),
        }
    }

    pub fn to_store(&self) -> ParamStore<F> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::clone(t)))
                .collect(),
        }
    }
}

impl<F: Real> From<ParamStore<F>> for SharedParams<F> {
    fn from(store: ParamStore<F>) -> Self {
        SharedParams {
            tensors: store
                .tensors
                .into_iter()
                .map(|(k, mut t)| {
                    t.grad = None;
                    (k, Arc::new(t))
                })
                .collect(),
        }
    }
}
