//! Flat, named parameter storage shared by the model, the optimizer, the
//! checkpoint format and the gradient checker.

use std::ops::Index;

use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamStore<F: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<F: Scalar> Index<ParamId> for ParamStore<F> {
    type Output = Tensor<F>;

    fn index(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t.as_param());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Same names and layout over different tensors (used by the gradient
    /// checker, which perturbs copies).
    pub fn with_tensors(&self, tensors: Vec<Tensor<F>>) -> Result<Self> {
        if tensors.len() != self.tensors.len()
            || tensors.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Dimension("parameter list does not match the store layout".into()));
        }
        Ok(ParamStore { names: self.names.clone(), tensors })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copy into another precision.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let data = t.data().iter().map(|v| G::of(v.as_f64())).collect();
                Tensor::param(t.shape(), data).expect("shape already validated")
            })
            .collect();
        ParamStore { names: self.names.clone(), tensors }
    }

    pub fn set(&mut self, id: ParamId, data: Vec<F>) -> Result<()> {
        self.tensors[id.0].set_data(data)
    }
}

/// Registers freshly initialized parameters under a name prefix.
pub struct ParamInit<'a, F: Scalar> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut Rng,
}

impl<F: Scalar> ParamInit<'_, F> {
    fn push(&mut self, name: &str, shape: &[usize], data: Vec<F>) -> ParamId {
        let t = Tensor::param(shape, data).expect("initializer produced a matching buffer");
        self.store.add(name, t)
    }

    /// Glorot-uniform `fan_in × fan_out` weight.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let data = (0..fan_in * fan_out).map(|_| F::of(dist.sample(self.rng))).collect();
        self.push(name, &[fan_in, fan_out], data)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::of(dist.sample(self.rng))).collect();
        self.push(name, shape, data)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.push(name, shape, vec![F::zero(); shape.iter().product()])
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.push(name, shape, vec![F::one(); shape.iter().product()])
    }
}
