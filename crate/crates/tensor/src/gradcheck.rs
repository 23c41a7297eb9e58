//! Central finite-difference oracle, independent of the tape's backward.

use rand::Rng;

use crate::{Graph, Scalar, Tensor, Var};

/// `|a - n| / max(1, |a|, |n|)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

pub struct Spec {
    pub shapes: Vec<Vec<usize>>,
    /// Magnitude bound of random inputs.
    pub range: f64,
    /// Keep inputs at least this far from zero (kinks of relu/abs, poles of log).
    pub avoid_zero: f64,
    pub positive: bool,
}

impl Spec {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            range: 1.0,
            avoid_zero: 0.0,
            positive: false,
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, spec: &Spec) -> f64 {
    loop {
        let v: f64 = rng.random_range(-spec.range..spec.range);
        let v = if spec.positive { v.abs() + 0.2 } else { v };
        if v.abs() >= spec.avoid_zero {
            return v;
        }
    }
}

/// Builds `op` on fresh inputs, reduces its output with a fixed random
/// weighting to a scalar, and compares backward against central differences
/// with step `h`. Returns the maximum relative error over `points` draws.
pub fn check<T: Scalar, R: Rng + ?Sized>(
    spec: &Spec,
    points: usize,
    h: f64,
    rng: &mut R,
    op: impl Fn(&mut Graph<T>, &[Var]) -> Var,
) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..points {
        let inputs: Vec<Vec<f64>> = spec
            .shapes
            .iter()
            .map(|s| (0..s.iter().product::<usize>()).map(|_| draw(rng, spec)).collect())
            .collect();
        // Fixed reduction weights for this point.
        let mut g0 = Graph::<T>::new();
        let vars0: Vec<Var> = inputs
            .iter()
            .zip(&spec.shapes)
            .map(|(v, s)| g0.input(Tensor::new(s, v.iter().map(|&x| T::c(x)).collect()).unwrap()))
            .collect();
        let out0 = op(&mut g0, &vars0);
        let oshape = g0.value(out0).shape().to_vec();
        let weights: Vec<f64> = (0..g0.value(out0).numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let wv = g0.constant(Tensor::new(&oshape, weights.iter().map(|&w| T::c(w)).collect()).unwrap());
        let prod = g0.mul(out0, wv).unwrap();
        let loss = g0.sum(prod);
        let grads = g0.backward(loss).unwrap();

        let forward = |vals: &[Vec<f64>]| -> f64 {
            let mut g = Graph::<T>::new();
            let vars: Vec<Var> = vals
                .iter()
                .zip(&spec.shapes)
                .map(|(v, s)| g.input(Tensor::new(s, v.iter().map(|&x| T::c(x)).collect()).unwrap()))
                .collect();
            let out = op(&mut g, &vars);
            g.value(out)
                .data()
                .iter()
                .zip(&weights)
                .map(|(o, w)| o.as_f64() * w)
                .sum()
        };
        for (k, var) in vars0.iter().enumerate() {
            let analytic = grads.get(*var).map(|s| s.to_vec()).unwrap_or_else(|| vec![T::zero(); inputs[k].len()]);
            for i in 0..inputs[k].len() {
                let mut plus = inputs.clone();
                plus[k][i] += h;
                let mut minus = inputs.clone();
                minus[k][i] -= h;
                let numeric = (forward(&plus) - forward(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(analytic[i].as_f64(), numeric));
            }
        }
    }
    worst
}

/// A graph builder over the check inputs.
pub type OpFn<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> Var>;

/// Every differentiable primitive with an input layout that keeps it
/// smooth near the sampled points.
pub fn primitive_cases<T: Scalar>() -> Vec<(&'static str, Spec, OpFn<T>)> {
    let mut v: Vec<(&'static str, Spec, OpFn<T>)> = Vec::new();
    v.push(("matmul", Spec::new(&[&[3, 4], &[4, 2]]), Box::new(|g, x| g.matmul(x[0], x[1]).unwrap())));
    v.push(("add", Spec::new(&[&[2, 3], &[2, 3]]), Box::new(|g, x| g.add(x[0], x[1]).unwrap())));
    v.push(("sub", Spec::new(&[&[2, 3], &[2, 3]]), Box::new(|g, x| g.sub(x[0], x[1]).unwrap())));
    v.push(("mul", Spec::new(&[&[2, 3], &[2, 3]]), Box::new(|g, x| g.mul(x[0], x[1]).unwrap())));
    v.push((
        "div",
        Spec { positive: true, ..Spec::new(&[&[2, 3], &[2, 3]]) },
        Box::new(|g, x| g.div(x[0], x[1]).unwrap()),
    ));
    v.push(("add_bias", Spec::new(&[&[3, 4], &[4]]), Box::new(|g, x| g.add_bias(x[0], x[1]).unwrap())));
    v.push(("scale", Spec::new(&[&[5]]), Box::new(|g, x| g.scale(x[0], T::c(-1.7)))));
    v.push(("add_scalar", Spec::new(&[&[5]]), Box::new(|g, x| g.add_scalar(x[0], T::c(0.3)))));
    v.push(("relu", Spec { avoid_zero: 0.05, ..Spec::new(&[&[6]]) }, Box::new(|g, x| g.relu(x[0]))));
    v.push(("tanh", Spec::new(&[&[6]]), Box::new(|g, x| g.tanh(x[0]))));
    v.push(("sigmoid", Spec { range: 3.0, ..Spec::new(&[&[6]]) }, Box::new(|g, x| g.sigmoid(x[0]))));
    v.push(("exp", Spec::new(&[&[6]]), Box::new(|g, x| g.exp(x[0]))));
    v.push(("log", Spec { positive: true, ..Spec::new(&[&[6]]) }, Box::new(|g, x| g.log(x[0]))));
    v.push(("sqrt", Spec { positive: true, ..Spec::new(&[&[6]]) }, Box::new(|g, x| g.sqrt(x[0]))));
    v.push(("abs", Spec { avoid_zero: 0.05, ..Spec::new(&[&[6]]) }, Box::new(|g, x| g.abs(x[0]))));
    v.push(("sum", Spec::new(&[&[2, 3]]), Box::new(|g, x| g.sum(x[0]))));
    v.push(("mean", Spec::new(&[&[2, 3]]), Box::new(|g, x| g.mean(x[0]))));
    v.push(("row_sum", Spec::new(&[&[3, 4]]), Box::new(|g, x| g.row_sum(x[0]).unwrap())));
    v.push(("softmax", Spec { range: 2.0, ..Spec::new(&[&[2, 5]]) }, Box::new(|g, x| g.softmax(x[0]))));
    v.push((
        "concat",
        Spec::new(&[&[2, 3], &[2, 2]]),
        Box::new(|g, x| g.concat(&[x[0], x[1], x[0]], 1).unwrap()),
    ));
    v.push(("slice", Spec::new(&[&[3, 5]]), Box::new(|g, x| g.slice(x[0], 1, 1, 3).unwrap())));
    v.push(("reshape", Spec::new(&[&[2, 6]]), Box::new(|g, x| g.reshape(x[0], &[3, 4]).unwrap())));
    v.push((
        "conv2d_s1",
        Spec::new(&[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]]),
        Box::new(|g, x| g.conv2d(x[0], x[1], x[2], 1, 1).unwrap()),
    ));
    v.push((
        "conv2d_s2",
        Spec::new(&[&[1, 2, 6, 6], &[2, 2, 3, 3], &[2]]),
        Box::new(|g, x| g.conv2d(x[0], x[1], x[2], 2, 1).unwrap()),
    ));
    v.push(("avgpool2", Spec::new(&[&[1, 2, 4, 4]]), Box::new(|g, x| g.avgpool2(x[0]).unwrap())));
    v.push(("upsample2", Spec::new(&[&[1, 2, 2, 3]]), Box::new(|g, x| g.upsample2(x[0]).unwrap())));
    v.push((
        "gather_rows",
        Spec::new(&[&[4, 3]]),
        Box::new(|g, x| g.gather_rows(x[0], &[2, 0, 2, 3]).unwrap()),
    ));
    v.push((
        "bilinear",
        Spec::new(&[&[3, 2, 4, 4]]),
        Box::new(|g, x| {
            let coords = [0.3, 2.2, 1.7, 0.0, 3.0, 2.5, 2.9, 1.1, 0.5, 0.5, 1.0, 3.0];
            g.bilinear(x[0], coords.iter().map(|&c| T::c(c)).collect()).unwrap()
        }),
    ));
    v.push((
        "normalize_rows",
        Spec { avoid_zero: 0.1, ..Spec::new(&[&[3, 4]]) },
        Box::new(|g, x| g.normalize_rows(x[0]).unwrap()),
    ));
    v
}
