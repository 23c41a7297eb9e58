//! Diagonal-covariance Gaussian mixtures fitted by expectation maximization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Real, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 200;
/// Independent seedings per fit; the one with the highest final
/// log-likelihood wins.
pub const EM_RESTARTS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub variances: Vec<Vec<T>>,
}

/// Outcome of a fit: the mixture plus the log-likelihood before every
/// M-step and after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit<T> {
    pub gmm: Gmm<T>,
    pub log_likelihood: Vec<T>,
}

fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

impl<T: Real> Gmm<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn log_component(&self, k: usize, x: &[T]) -> T {
        let ln2pi = T::c((2.0 * std::f64::consts::PI).ln());
        let half = T::c(0.5);
        let mut acc = self.weights[k].ln();
        for ((&xi, &m), &v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let d = xi - m;
            acc -= half * (ln2pi + v.ln() + d * d / v);
        }
        acc
    }

    pub fn log_density(&self, x: &[T]) -> T {
        let terms: Vec<T> = (0..self.components()).map(|k| self.log_component(k, x)).collect();
        log_sum_exp(&terms)
    }

    pub fn log_likelihood(&self, data: &[Vec<T>]) -> T {
        data.iter().map(|x| self.log_density(x)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total: T = self.weights.iter().copied().sum();
        if (total - T::one()).abs() > T::c(1e-6) {
            return Err(Error::invalid("gmm", "mixture weights do not sum to one"));
        }
        if self.variances.iter().flatten().any(|&v| v < T::c(VARIANCE_FLOOR) * T::c(1.0 - 1e-9)) {
            return Err(Error::invalid("gmm", "variance below the floor"));
        }
        Ok(())
    }

    /// Component index by categorical weights, then a diagonal Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<T>) {
        let u = T::c(rng.random::<f64>());
        let mut acc = T::zero();
        let mut k = self.components() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let x = self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(&m, &v)| {
                let n: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * T::c(n)
            })
            .collect();
        (k, x)
    }
}

/// k-means++ seeding. Distances are measured with each dimension divided
/// by `scale`, so coordinates with different units weigh equally.
fn kmeans_pp<T: Real, R: Rng + ?Sized>(data: &[Vec<T>], scale: &[T], k: usize, rng: &mut R) -> Vec<Vec<T>> {
    let sq_dist = |a: &[T], b: &[T]| -> T {
        a.iter().zip(b).zip(scale).map(|((&x, &y), &s)| ((x - y) / s).powi(2)).sum()
    };
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<T> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    // Greedy variant: draw a few candidates per step and keep the one that
    // lowers the total potential most.
    let trials = 2 + (k as f64).ln().floor() as usize;
    while centers.len() < k {
        let total: T = d2.iter().copied().sum();
        let mut best: Option<(T, usize, Vec<T>)> = None;
        for _ in 0..trials {
            let idx = if total > T::zero() {
                let target = T::c(rng.random::<f64>()) * total;
                let mut acc = T::zero();
                let mut pick = data.len() - 1;
                for (i, &d) in d2.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..data.len())
            };
            let next: Vec<T> = d2.iter().zip(data).map(|(&d, x)| d.min(sq_dist(x, &data[idx]))).collect();
            let potential: T = next.iter().copied().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, idx, next));
            }
        }
        let (_, idx, next) = best.expect("at least one trial");
        centers.push(data[idx].clone());
        d2 = next;
    }
    centers
}

/// EM with k-means++ initialization, restarted `EM_RESTARTS` times; each run
/// stops when the log-likelihood gain drops below the tolerance or after the
/// iteration cap.
pub fn fit_gmm<T: Real, R: Rng + ?Sized>(data: &[Vec<T>], k: usize, rng: &mut R) -> Result<GmmFit<T>> {
    if data.is_empty() || k == 0 {
        return Err(Error::invalid("fit_gmm", "need at least one point and one component"));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::invalid("fit_gmm", "points differ in dimension"));
    }
    let k = if data.len() < k {
        log::warn!("fit_gmm: {} points for {k} components, reducing to {}", data.len(), data.len());
        data.len()
    } else {
        k
    };
    let floor = T::c(VARIANCE_FLOOR);
    let n = T::c(data.len() as f64);
    let mean: Vec<T> = (0..dim).map(|d| data.iter().map(|x| x[d]).sum::<T>() / n).collect();
    let global_var: Vec<T> = (0..dim)
        .map(|d| (data.iter().map(|x| (x[d] - mean[d]).powi(2)).sum::<T>() / n).max(floor))
        .collect();
    let scale: Vec<T> = global_var.iter().map(|v| v.sqrt()).collect();
    let restarts = if k == 1 { 1 } else { EM_RESTARTS };
    let mut best: Option<GmmFit<T>> = None;
    for _ in 0..restarts {
        let init = Gmm {
            weights: vec![T::one() / T::c(k as f64); k],
            means: kmeans_pp(data, &scale, k, rng),
            variances: vec![global_var.clone(); k],
        };
        let fit = run_em(data, init);
        let better = |b: &GmmFit<T>| fit.log_likelihood.last() > b.log_likelihood.last();
        if best.as_ref().is_none_or(better) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_em<T: Real>(data: &[Vec<T>], mut gmm: Gmm<T>) -> GmmFit<T> {
    let (k, dim) = (gmm.means.len(), data[0].len());
    let floor = T::c(VARIANCE_FLOOR);
    let n = T::c(data.len() as f64);
    let mut trace = Vec::new();
    let mut resp = vec![vec![T::zero(); k]; data.len()];
    for _ in 0..EM_MAX_ITERS {
        // E-step
        let mut ll = T::zero();
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            for (j, rj) in r.iter_mut().enumerate() {
                *rj = gmm.log_component(j, x);
            }
            let z = log_sum_exp(r);
            ll += z;
            for rj in r.iter_mut() {
                *rj = (*rj - z).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            if ll - prev < T::c(EM_TOLERANCE) {
                trace.push(ll);
                return GmmFit { gmm, log_likelihood: trace };
            }
        }
        trace.push(ll);
        // M-step
        for j in 0..k {
            let nk: T = resp.iter().map(|r| r[j]).sum();
            if nk <= T::c(1e-300) {
                gmm.weights[j] = T::zero();
                continue;
            }
            gmm.weights[j] = nk / n;
            for d in 0..dim {
                let m = data.iter().zip(&resp).map(|(x, r)| r[j] * x[d]).sum::<T>() / nk;
                gmm.means[j][d] = m;
            }
            for d in 0..dim {
                let m = gmm.means[j][d];
                let v = data.iter().zip(&resp).map(|(x, r)| r[j] * (x[d] - m).powi(2)).sum::<T>() / nk;
                gmm.variances[j][d] = v.max(floor);
            }
        }
        let total: T = gmm.weights.iter().copied().sum();
        for w in &mut gmm.weights {
            *w = *w / total;
        }
    }
    let ll = gmm.log_likelihood(data);
    trace.push(ll);
    GmmFit { gmm, log_likelihood: trace }
}
