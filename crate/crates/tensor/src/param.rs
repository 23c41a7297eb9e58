//! Trainable parameters and the Adam optimizer.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Gradients, Graph};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// A named tensor with its accumulated gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Frozen parameters enter graphs as constants and are skipped by Adam.
    pub frozen: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    steps: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            steps: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let n = value.numel();
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            value,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform fan-in initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// scaled by `gain`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> ParamId {
        let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::c(rng.random_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches data"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    /// Adds the gradients recorded for parameter nodes on `graph`.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &Gradients<T>) {
        for (var, id) in graph.param_nodes() {
            if let Some(g) = grads.get(var) {
                for (a, &b) in self.params[id.0].grad.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every non-frozen parameter, then zeroes all
    /// gradients. Non-finite gradients abort before anything is modified.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = store
            .params
            .iter()
            .find(|p| !p.frozen && !p.grad.all_finite())
        {
            return Err(TensorError::NonFiniteGradient(p.name.clone()));
        }
        store.steps += 1;
        let t = store.steps as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::c(self.lr), T::c(self.eps));
        for p in store.params.iter_mut().filter(|p| !p.frozen) {
            let g = p.grad.data();
            let val = p.value.data_mut();
            for i in 0..val.len() {
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * g[i];
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = p.m[i] / bc1;
                let vh = p.v[i] / bc2;
                val[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
