//! The tape. Every forward op appends a node holding its output value and
//! how it was computed; `backward` walks the nodes once in reverse.

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Abs,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Softmax(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    AvgPool2(Var),
    Upsample2(Var),
    GatherRows(Var, Vec<usize>),
    Bilinear(Var, Vec<T>),
    NormalizeRows(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Nodes are stored in creation order, so every
/// node's inputs precede it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const NORM_EPS: f64 = 1e-12;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Snapshot of a stored parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = !p.frozen;
        self.push(p.value.clone(), Op::Param(id), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", &[sa, sb]);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(name, &[self.shape(a), self.shape(b)]);
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `x[.., n] + bias[n]`, the only broadcasting form supported.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx[sx.len() - 1] != sb[0] {
            return shape_err("add_bias", &[sx, sb]);
        }
        let n = sb[0];
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += b[i % n];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        self.push(t, Op::AddScalar(x), rg)
    }

    fn unary(&mut self, x: Var, u: Unary) -> Var {
        let f: fn(T) -> T = match u {
            Unary::Relu => |v| if v > T::zero() { v } else { T::zero() },
            Unary::Tanh => |v| v.tanh(),
            Unary::Sigmoid => |v| T::one() / (T::one() + (-v).exp()),
            Unary::Exp => |v| v.exp(),
            Unary::Log => |v| v.ln(),
            Unary::Sqrt => |v| v.sqrt(),
            Unary::Abs => |v| v.abs(),
        };
        let t = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(t, Op::Unary(x, u), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::c(t.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sums the last axis of a matrix: `[m, n] -> [m, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return shape_err("row_sum", &[s]);
        }
        let (m, n) = (s[0], s[1]);
        let d = self.value(x).data();
        let out = (0..m).map(|i| d[i * n..(i + 1) * n].iter().copied().sum()).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[m, 1], out)?, Op::RowSum(x), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().expect("non-empty shape");
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?)
        .to_vec();
        if axis >= first.len() {
            return shape_err("concat", &[&first]);
        }
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                let shapes: Vec<&[usize]> = xs.iter().map(|&v| self.shape(v)).collect();
                return shape_err("concat", &shapes);
            }
        }
        let (outer, inner) = outer_inner(&first, axis);
        let total: usize = xs.iter().map(|&x| self.shape(x)[axis]).sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat(xs.to_vec(), axis), rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return shape_err("slice", &[&s, &[axis, start, len]]);
        }
        let (outer, inner) = outer_inner(&s, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Zero-padded convolution. `x: [N,C,H,W]`, `w: [O,C,k,k]`, `b: [O]`.
    /// Only odd square kernels with stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let bad = sx.len() != 4
            || sw.len() != 4
            || sb.len() != 1
            || sw[1] != sx[1]
            || sw[2] != sw[3]
            || sw[2] % 2 == 0
            || sb[0] != sw[0]
            || !(stride == 1 || stride == 2)
            || sx[2] + 2 * pad < sw[2]
            || sx[3] + 2 * pad < sw[2];
        if bad {
            return shape_err("conv2d", &[sx, sw, sb, &[stride, pad]]);
        }
        let (n, o) = (sx[0], sw[0]);
        let g = ConvGeom {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kernel: sw[2],
            stride,
            pad,
        };
        let (ho, wo) = (g.out_h(), g.out_w());
        let img_len = g.channels * g.height * g.width;
        let mut out = vec![T::zero(); n * o * ho * wo];
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut cols = if stride == 1 { Vec::new() } else { vec![T::zero(); g.col_rows() * ho * wo] };
        for i in 0..n {
            let img = &xd[i * img_len..(i + 1) * img_len];
            let dst = &mut out[i * o * ho * wo..(i + 1) * o * ho * wo];
            for (oc, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                chunk.fill(bd[oc]);
            }
            if stride == 1 {
                kernels::conv_direct_acc(img, wd, dst, &g, o);
            } else {
                kernels::im2col(img, &g, &mut cols);
                kernels::matmul_acc(wd, &cols, dst, o, g.col_rows(), ho * wo);
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let t = Tensor::new(&[n, o, ho, wo], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// 2x2 average pooling over `[N,C,H,W]` with even `H`, `W`.
    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return shape_err("avgpool2", &[&s]);
        }
        let (h, w) = (s[2], s[3]);
        let (h2, w2) = (h / 2, w / 2);
        let d = self.value(x).data();
        let quarter = T::c(0.25);
        let mut out = vec![T::zero(); s[0] * s[1] * h2 * w2];
        for (plane, dst) in d.chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * w2 + xx] =
                        (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[s[0], s[1], h2, w2], out)?, Op::AvgPool2(x), rg))
    }

    /// Nearest-neighbour 2x upsampling over `[N,C,H,W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err("upsample2", &[&s]);
        }
        let (h, w) = (s[2], s[3]);
        let d = self.value(x).data();
        let mut out = vec![T::zero(); s[0] * s[1] * 4 * h * w];
        for (plane, dst) in d.chunks(h * w).zip(out.chunks_mut(4 * h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?,
            Op::Upsample2(x),
            rg,
        ))
    }

    /// Selects rows of a matrix; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || idx.is_empty() || idx.iter().any(|&i| i >= s[0]) {
            return shape_err("gather_rows", &[&s, &[idx.len()]]);
        }
        let n = s[1];
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&d[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[idx.len(), n], out)?,
            Op::GatherRows(x, idx.to_vec()),
            rg,
        ))
    }

    /// Bilinear lookup into a stack of feature planes `[N,C,H,W]`.
    ///
    /// `coords` holds, for each of `P` queries and each of the `N` planes,
    /// a `(row, col)` pair of continuous grid coordinates already clamped to
    /// the grid (`P*N*2` values). The output is `[P, N*C]` with the per-plane
    /// channel vectors concatenated in plane order.
    pub fn bilinear(&mut self, planes: Var, coords: Vec<T>) -> Result<Var> {
        let s = self.shape(planes).to_vec();
        if s.len() != 4 || coords.is_empty() || coords.len() % (2 * s[0]) != 0 {
            return shape_err("bilinear", &[&s, &[coords.len()]]);
        }
        let (np, c, h, w) = (s[0], s[1], s[2], s[3]);
        let lim_r = T::c((h - 1) as f64);
        let lim_c = T::c((w - 1) as f64);
        if coords.chunks(2).any(|rc| {
            !(rc[0] >= T::zero() && rc[0] <= lim_r && rc[1] >= T::zero() && rc[1] <= lim_c)
        }) {
            return Err(TensorError::Invalid {
                op: "bilinear",
                msg: "query coordinate outside the grid".into(),
            });
        }
        let p = coords.len() / (2 * np);
        let d = self.value(planes).data();
        let mut out = vec![T::zero(); p * np * c];
        for q in 0..p {
            for k in 0..np {
                let (r0, r1, tr) = kernels::lerp_cell(coords[(q * np + k) * 2], h);
                let (c0, c1, tc) = kernels::lerp_cell(coords[(q * np + k) * 2 + 1], w);
                let one = T::one();
                let wts = [
                    (r0, c0, (one - tr) * (one - tc)),
                    (r0, c1, (one - tr) * tc),
                    (r1, c0, tr * (one - tc)),
                    (r1, c1, tr * tc),
                ];
                for ch in 0..c {
                    let base = (k * c + ch) * h * w;
                    let mut acc = T::zero();
                    for &(r, cc, wt) in &wts {
                        acc += wt * d[base + r * w + cc];
                    }
                    out[q * np * c + k * c + ch] = acc;
                }
            }
        }
        let rg = self.rg(planes);
        Ok(self.push(
            Tensor::new(&[p, np * c], out)?,
            Op::Bilinear(planes, coords),
            rg,
        ))
    }

    /// Scales each row of a matrix to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return shape_err("normalize_rows", &[&s]);
        }
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(s[1]) {
            let nrm = (row.iter().map(|&v| v * v).sum::<T>() + T::c(NORM_EPS)).sqrt();
            for v in row.iter_mut() {
                *v = *v / nrm;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::NormalizeRows(x), rg))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &gout, &mut grads);
            }
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| kernels::matmul_bt_acc(g, bd, ga, m, n, k));
                acc(*b, &mut |gb| kernels::matmul_at_acc(ad, g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bd[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * ad[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let bd = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] / bd[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] -= g[i] * y[i] / bd[i];
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| {
                    let n = gb.len();
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * *s));
            }
            Op::AddScalar(x) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
            }
            Op::Unary(x, u) => {
                let xd = self.value(*x).data();
                let u = *u;
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        let d = match u {
                            Unary::Relu => {
                                if xd[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Tanh => T::one() - y[i] * y[i],
                            Unary::Sigmoid => y[i] * (T::one() - y[i]),
                            Unary::Exp => y[i],
                            Unary::Log => T::one() / xd[i],
                            Unary::Sqrt => T::c(0.5) / y[i],
                            Unary::Abs => {
                                if xd[i] > T::zero() {
                                    T::one()
                                } else if xd[i] < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                        };
                        gx[i] += g[i] * d;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = T::c(self.value(*x).numel() as f64);
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::RowSum(x) => {
                let n = self.shape(*x)[1];
                acc(*x, &mut |gx| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += g[i / n];
                    }
                });
            }
            Op::Softmax(x) => {
                let n = *self.shape(*x).last().unwrap();
                acc(*x, &mut |gx| {
                    for ((gr, yr), xr) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            xr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let total = shape[*axis] * inner;
                let mut off = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis] * inner;
                    acc(x, &mut |gx| {
                        for o in 0..outer {
                            let src = &g[o * total + off..o * total + off + len];
                            for (d, &s) in gx[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    off += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, inner) = outer_inner(s, *axis);
                let len = node.value.shape()[*axis] * inner;
                let full = s[*axis] * inner;
                let base = *start * inner;
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for j in 0..len {
                            gx[o * full + base + j] += g[o * len + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let geom = ConvGeom {
                    channels: sx[1],
                    height: sx[2],
                    width: sx[3],
                    kernel: sw[2],
                    stride: *stride,
                    pad: *pad,
                };
                let (n, o) = (sx[0], sw[0]);
                let hw = geom.out_h() * geom.out_w();
                let img_len = geom.channels * geom.height * geom.width;
                let rows = geom.col_rows();
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        for oc in 0..o {
                            let start = (i * o + oc) * hw;
                            gb[oc] += g[start..start + hw].iter().copied().sum::<T>();
                        }
                    }
                });
                if *stride == 1 {
                    acc(*w, &mut |gw| {
                        for i in 0..n {
                            let img = &xd[i * img_len..(i + 1) * img_len];
                            kernels::conv_direct_grad_weight(&g[i * o * hw..(i + 1) * o * hw], img, gw, &geom, o);
                        }
                    });
                    acc(*x, &mut |gx| {
                        for i in 0..n {
                            let dst = &mut gx[i * img_len..(i + 1) * img_len];
                            kernels::conv_direct_grad_input(&g[i * o * hw..(i + 1) * o * hw], wd, dst, &geom, o);
                        }
                    });
                } else {
                    let mut cols = vec![T::zero(); rows * hw];
                    acc(*w, &mut |gw| {
                        for i in 0..n {
                            kernels::im2col(&xd[i * img_len..(i + 1) * img_len], &geom, &mut cols);
                            kernels::matmul_bt_acc(&g[i * o * hw..(i + 1) * o * hw], &cols, gw, o, hw, rows);
                        }
                    });
                    acc(*x, &mut |gx| {
                        for i in 0..n {
                            cols.fill(T::zero());
                            kernels::matmul_at_acc(wd, &g[i * o * hw..(i + 1) * o * hw], &mut cols, o, rows, hw);
                            kernels::col2im_acc(&cols, &geom, &mut gx[i * img_len..(i + 1) * img_len]);
                        }
                    });
                }
            }
            Op::AvgPool2(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                let (h2, w2) = (h / 2, w / 2);
                let q = T::c(0.25);
                acc(*x, &mut |gx| {
                    for (src, dst) in g.chunks(h2 * w2).zip(gx.chunks_mut(h * w)) {
                        for yy in 0..h2 {
                            for xx in 0..w2 {
                                let v = src[yy * w2 + xx] * q;
                                let i = 2 * yy * w + 2 * xx;
                                dst[i] += v;
                                dst[i + 1] += v;
                                dst[i + w] += v;
                                dst[i + w + 1] += v;
                            }
                        }
                    }
                });
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                acc(*x, &mut |gx| {
                    for (src, dst) in g.chunks(4 * h * w).zip(gx.chunks_mut(h * w)) {
                        for yy in 0..2 * h {
                            for xx in 0..2 * w {
                                dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::GatherRows(x, idx) => {
                let n = self.shape(*x)[1];
                acc(*x, &mut |gx| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            gx[i * n + j] += g[r * n + j];
                        }
                    }
                });
            }
            Op::Bilinear(planes, coords) => {
                let s = self.shape(*planes);
                let (np, c, h, w) = (s[0], s[1], s[2], s[3]);
                let p = coords.len() / (2 * np);
                acc(*planes, &mut |gp| {
                    for q in 0..p {
                        for k in 0..np {
                            let (r0, r1, tr) = kernels::lerp_cell(coords[(q * np + k) * 2], h);
                            let (c0, c1, tc) = kernels::lerp_cell(coords[(q * np + k) * 2 + 1], w);
                            let one = T::one();
                            let wts = [
                                (r0, c0, (one - tr) * (one - tc)),
                                (r0, c1, (one - tr) * tc),
                                (r1, c0, tr * (one - tc)),
                                (r1, c1, tr * tc),
                            ];
                            for ch in 0..c {
                                let gv = g[q * np * c + k * c + ch];
                                let base = (k * c + ch) * h * w;
                                for &(r, cc, wt) in &wts {
                                    gp[base + r * w + cc] += wt * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::NormalizeRows(x) => {
                let n = self.shape(*x)[1];
                let xd = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for r in 0..gx.len() / n {
                        let xr = &xd[r * n..(r + 1) * n];
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let nrm = (xr.iter().map(|&v| v * v).sum::<T>() + T::c(NORM_EPS)).sqrt();
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += (gr[j] - yr[j] * dot) / nrm;
                        }
                    }
                });
            }
        }
    }

    /// Parameter ids recorded on this graph, in node order.
    pub fn param_nodes(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) if n.requires_grad => Some((Var(i), id)),
            _ => None,
        })
    }
}

/// Output of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, if `v` influenced it and takes gradients.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
