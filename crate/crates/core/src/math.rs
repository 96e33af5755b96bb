//! Small numeric helpers.

pub fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    let sum: f64 = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Softmax written into `out`, returns the log normaliser.
pub fn softmax_into(xs: &[f64], out: &mut [f64]) -> f64 {
    let lse = logsumexp(xs.iter().copied());
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - lse).exp();
    }
    lse
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    softmax_into(xs, &mut out);
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in xs.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
