//! Scalar reference implementations of every checked function, written with
//! plain loops over flat coordinate vectors and generic over the number type.
//! They share no code with the matrix implementations they check.

use nalgebra::DMatrix;

use super::dd::Real;

/// Reads consecutive blocks from a flat coordinate vector.
struct Cursor<T> {
    vals: Vec<T>,
    pos: usize,
}

impl<T: Real> Cursor<T> {
    fn new(theta: &[f64]) -> Self {
        Cursor { vals: theta.iter().map(|&v| T::lift(v)).collect(), pos: 0 }
    }

    fn take(&mut self, n: usize) -> Vec<T> {
        let out = self.vals[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }
}

fn sum<T: Real>(it: impl IntoIterator<Item = T>) -> T {
    it.into_iter().fold(T::zero(), |a, b| a + b)
}

fn logsumexp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(xs[0], T::max);
    m + sum(xs.iter().map(|&x| (x - m).exp())).ln()
}

fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let lse = logsumexp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// `[mean; std]` of the `t x h` row-major frames under weights `alpha`.
fn weighted_stats<T: Real>(x: &[T], t: usize, h: usize, alpha: &[T], eps_var: f64) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * h);
    let mut stds = Vec::with_capacity(h);
    for c in 0..h {
        let mean = sum((0..t).map(|i| alpha[i] * x[i * h + c]));
        let var = sum((0..t).map(|i| {
            let d = x[i * h + c] - mean;
            alpha[i] * d * d
        }));
        out.push(mean);
        stds.push(var.max(T::lift(eps_var)).sqrt());
    }
    out.extend(stds);
    out
}

/// `m (rows x cols, row-major) * x_t` for every frame, plus bias.
fn affine_frames<T: Real>(x: &[T], t: usize, h: usize, w: &[T], b: &[T]) -> Vec<Vec<T>> {
    let a = b.len();
    (0..t)
        .map(|i| (0..a).map(|u| b[u] + sum((0..h).map(|c| w[u * h + c] * x[i * h + c]))).collect())
        .collect()
}

fn project<T: Real>(out: &[T], r: &[f64]) -> T {
    sum(out.iter().zip(r).map(|(&o, &ri)| o * T::lift(ri)))
}

#[derive(Debug, Clone, Copy)]
pub struct PoolDims {
    pub frames: usize,
    pub channels: usize,
    pub n_att: usize,
    pub n_heads: usize,
    pub n_global: usize,
    pub eps_var: f64,
}

pub fn attentive<T: Real>(theta: &[f64], d: PoolDims, r: &[f64]) -> T {
    let (t, h, a) = (d.frames, d.channels, d.n_att);
    let mut cur = Cursor::<T>::new(theta);
    let x = cur.take(t * h);
    let w = cur.take(a * h);
    let b = cur.take(a);
    let v = cur.take(a);
    let hidden = affine_frames(&x, t, h, &w, &b);
    let e: Vec<T> = hidden.iter().map(|z| sum(z.iter().zip(&v).map(|(&zi, &vi)| vi * zi.tanh()))).collect();
    let alpha = softmax(&e);
    project(&weighted_stats(&x, t, h, &alpha, d.eps_var), r)
}

fn mha_heads<T: Real>(cur: &mut Cursor<T>, x: &[T], d: PoolDims) -> Vec<Vec<T>> {
    let (t, h, a, j) = (d.frames, d.channels, d.n_att, d.n_heads);
    let w = cur.take(a * h);
    let b = cur.take(a);
    let heads = cur.take(j * a);
    let act: Vec<Vec<T>> = affine_frames(x, t, h, &w, &b)
        .into_iter()
        .map(|z| z.into_iter().map(|zi| zi.max(T::zero())).collect())
        .collect();
    (0..j)
        .map(|head| {
            let e: Vec<T> = act.iter().map(|ai| sum((0..a).map(|u| heads[head * a + u] * ai[u]))).collect();
            weighted_stats(x, t, h, &softmax(&e), d.eps_var)
        })
        .collect()
}

pub fn mha<T: Real>(theta: &[f64], d: PoolDims, r: &[f64]) -> T {
    let mut cur = Cursor::<T>::new(theta);
    let x = cur.take(d.frames * d.channels);
    let out: Vec<T> = mha_heads(&mut cur, &x, d).concat();
    project(&out, r)
}

pub fn gmha<T: Real>(theta: &[f64], d: PoolDims, r: &[f64]) -> T {
    let mut cur = Cursor::<T>::new(theta);
    let x = cur.take(d.frames * d.channels);
    let heads = mha_heads(&mut cur, &x, d);
    let (g, two_h) = (d.n_global, 2 * d.channels);
    let v = cur.take(g * two_h);
    let u = cur.take(g);
    let scores: Vec<T> = heads
        .iter()
        .map(|hj| sum((0..g).map(|i| u[i] * sum((0..two_h).map(|c| v[i * two_h + c] * hj[c])).tanh())))
        .collect();
    let gamma = softmax(&scores);
    let out: Vec<T> = (0..two_h).map(|c| sum(heads.iter().zip(&gamma).map(|(hj, &gj)| gj * hj[c]))).collect();
    project(&out, r)
}

/// Coordinates: embedding (`h`), then class weights (`k x h`, row-major).
pub fn aam<T: Real>(theta: &[f64], h: usize, k: usize, label: usize, margin: f64, scale: f64) -> T {
    let mut cur = Cursor::<T>::new(theta);
    let x = cur.take(h);
    let w = cur.take(k * h);
    let norm = |v: &[T]| sum(v.iter().map(|&e| e * e)).sqrt();
    let x_norm = norm(&x);
    let s = T::lift(scale);
    let mut logits: Vec<T> = (0..k)
        .map(|c| {
            let row = &w[c * h..(c + 1) * h];
            let cos = sum(row.iter().zip(&x).map(|(&a, &b)| a * b)) / (norm(row) * x_norm);
            s * cos
        })
        .collect();
    let c_y = (logits[label] / s).max(T::lift(-1.0));
    let c_y = if c_y > T::lift(1.0) { T::lift(1.0) } else { c_y };
    let target = if c_y > T::lift((std::f64::consts::PI - margin).cos()) {
        let sin_y = (T::lift(1.0) - c_y * c_y).max(T::zero()).sqrt();
        c_y * T::lift(margin.cos()) - sin_y * T::lift(margin.sin())
    } else {
        c_y - T::lift(margin * margin.sin())
    };
    logits[label] = s * target;
    logsumexp(&logits) - logits[label]
}

/// Coordinates: weights (`k x p`, row-major), then biases.
pub fn multinomial<T: Real>(theta: &[f64], features: &DMatrix<f64>, labels: &[usize], class_weights: &[f64], l2: f64) -> T {
    let (n, p) = features.shape();
    let k = class_weights.len();
    let mut cur = Cursor::<T>::new(theta);
    let w = cur.take(k * p);
    let b = cur.take(k);
    let mut total = T::zero();
    let mut weight_sum = T::zero();
    for t in 0..n {
        let logits: Vec<T> = (0..k)
            .map(|c| b[c] + sum((0..p).map(|j| w[c * p + j] * T::lift(features[(t, j)]))))
            .collect();
        let wt = T::lift(class_weights[labels[t]]);
        total = total + wt * (logsumexp(&logits) - logits[labels[t]]);
        weight_sum = weight_sum + wt;
    }
    total / weight_sum + T::lift(l2) * sum(w.iter().map(|&v| v * v))
}

/// Coordinates: one scale per system, then one offset per language. Each
/// trial's cross-entropy is clamped at `-ln(floor)` and weighted by
/// `1 / (K N_y ln 2)`.
pub fn cllr<T: Real>(theta: &[f64], systems: &[DMatrix<f64>], truth: &[usize], floor: f64) -> T {
    let k = systems[0].ncols();
    let s = systems.len();
    let mut cur = Cursor::<T>::new(theta);
    let alphas = cur.take(s);
    let betas = cur.take(k);
    let mut counts = vec![0usize; k];
    for &y in truth {
        counts[y] += 1;
    }
    let cap = -T::lift(floor).ln();
    let ln2 = T::lift(2.0).ln();
    let mut total = T::zero();
    for (t, &y) in truth.iter().enumerate() {
        let fused: Vec<T> = (0..k)
            .map(|j| betas[j] + sum((0..s).map(|a| alphas[a] * T::lift(systems[a][(t, j)]))))
            .collect();
        let nll = logsumexp(&fused) - fused[y];
        let nll = if nll > cap { cap } else { nll };
        total = total + nll / (T::lift((k * counts[y]) as f64) * ln2);
    }
    total
}

/// `r . (A x)`.
pub fn linear<T: Real>(theta: &[f64], a: &DMatrix<f64>, r: &[f64]) -> T {
    let x: Vec<T> = theta.iter().map(|&v| T::lift(v)).collect();
    sum((0..a.nrows()).map(|i| T::lift(r[i]) * sum((0..a.ncols()).map(|j| T::lift(a[(i, j)]) * x[j]))))
}
