//! Small layer helpers over [`Graph`] and [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::param::{ParamId, ParamStore};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in, 0.5, rng);
        let b = store.add_zeros(format!("{name}.b"), &[fan_out]);
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }

    /// Tape-free forward over `rows` row-major inputs.
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], rows: usize) -> Vec<T> {
        let b = store.get(self.b).value.data();
        let mut out: Vec<T> = (0..rows).flat_map(|_| b.iter().copied()).collect();
        kernels::matmul_acc(
            x,
            store.get(self.w).value.data(),
            &mut out,
            rows,
            self.fan_in,
            self.fan_out,
        );
        out
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").fan_out
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], rows: usize) -> Vec<T> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.apply(store, &h, rows);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
        h
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Square `kernel`x`kernel` convolution with "same" zero padding.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = store.add_uniform(
            format!("{name}.w"),
            &[c_out, c_in, kernel, kernel],
            fan_in,
            1.0,
            rng,
        );
        let b = store.add_zeros(format!("{name}.b"), &[c_out]);
        Self {
            w,
            b,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Numerically stable mean binary cross-entropy on logits:
/// `mean(relu(x) - x*y + log(1 + exp(-|x|)))`.
pub fn bce_with_logits<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: Var) -> Result<Var> {
    let pos = g.relu(logits);
    let xy = g.mul(logits, targets)?;
    let a = g.abs(logits);
    let na = g.scale(a, -T::one());
    let e = g.exp(na);
    let e1 = g.add_scalar(e, T::one());
    let sp = g.log(e1);
    let t = g.sub(pos, xy)?;
    let l = g.add(t, sp)?;
    Ok(g.mean(l))
}

/// Mean squared error over all elements.
pub fn mse<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Convenience: a `[rows, cols]` constant from a flat buffer.
pub fn matrix<T: Scalar>(g: &mut Graph<T>, data: Vec<T>, rows: usize, cols: usize) -> Result<Var> {
    Ok(g.constant(Tensor::new(&[rows, cols], data)?))
}
