use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::logsumexp;

/// Additive angular margin softmax. Logits are `s * cos(theta_y + m)` for the
/// target class and `s * cos(theta_k)` otherwise, with `theta` measured
/// between the normalised embedding and normalised class weights. When
/// `theta_y + m` would pass `pi` (`cos theta_y <= cos(pi - m)`), the target
/// logit falls back to `s * (cos theta_y - m sin m)`, which keeps it monotone.
#[derive(Debug, Clone, PartialEq)]
pub struct AamParams {
    /// `K x H`
    pub class_weights: DMatrix<f64>,
    pub margin: f64,
    pub scale: f64,
}

impl AamParams {
    pub const DEFAULT_MARGIN: f64 = 0.2;
    pub const DEFAULT_SCALE: f64 = 30.0;

    pub fn new(class_weights: DMatrix<f64>) -> Self {
        AamParams {
            class_weights,
            margin: Self::DEFAULT_MARGIN,
            scale: Self::DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AamOutput {
    pub loss: f64,
    pub logits: DVector<f64>,
    pub grad_embedding: DVector<f64>,
    pub grad_class_weights: DMatrix<f64>,
}

pub fn aam_loss(embedding: &DVector<f64>, label: usize, params: &AamParams) -> Result<AamOutput> {
    let (k, h) = params.class_weights.shape();
    if embedding.len() != h {
        return Err(Error::DimensionMismatch { expected: h, actual: embedding.len() });
    }
    if label >= k {
        return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
    }
    let (m, s) = (params.margin, params.scale);
    if !(m >= 0.0 && m < PI / 2.0) {
        return Err(Error::invalid("AAM margin must lie in [0, pi/2)"));
    }
    if !(s > 0.0) {
        return Err(Error::invalid("AAM scale must be > 0"));
    }
    let x_norm = embedding.norm();
    if x_norm == 0.0 {
        return Err(Error::invalid("zero-norm embedding"));
    }
    let x_hat = embedding / x_norm;
    let mut w_hat = params.class_weights.clone();
    let mut w_norms = vec![0.0; k];
    for (c, mut row) in w_hat.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            return Err(Error::invalid(format!("zero-norm weight for class {c}")));
        }
        w_norms[c] = n;
        row /= n;
    }
    let cos = &w_hat * &x_hat;

    let c_y = cos[label].clamp(-1.0, 1.0);
    let (cos_m, sin_m) = (m.cos(), m.sin());
    let (target, d_target) = if c_y > (PI - m).cos() {
        let sin_y = (1.0 - c_y * c_y).max(0.0).sqrt();
        let d = if sin_y > 0.0 { cos_m + sin_m * c_y / sin_y } else { cos_m };
        (c_y * cos_m - sin_y * sin_m, d)
    } else {
        (c_y - m * sin_m, 1.0)
    };
    let mut logits = &cos * s;
    logits[label] = s * target;

    let lse = logsumexp(logits.iter().copied().collect::<Vec<_>>());
    // softplus of the competitors' log-sum-exp relative to the target keeps
    // precision when the loss is tiny
    let others: Vec<f64> = (0..k).filter(|&c| c != label).map(|c| logits[c] - logits[label]).collect();
    let loss = if others.is_empty() {
        0.0
    } else {
        let d = logsumexp(others);
        if d > 0.0 { d + (-d).exp().ln_1p() } else { d.exp().ln_1p() }
    };
    // d loss / d cos_k
    let g_cos = DVector::from_fn(k, |c, _| {
        let p = (logits[c] - lse).exp();
        let g_logit = p - if c == label { 1.0 } else { 0.0 };
        s * g_logit * if c == label { d_target } else { 1.0 }
    });

    let mut grad_embedding = DVector::zeros(h);
    let mut grad_class_weights = DMatrix::zeros(k, h);
    for c in 0..k {
        let w_c = w_hat.row(c).transpose();
        // d cos / d x = (w_hat - cos x_hat) / |x|
        grad_embedding.axpy(g_cos[c] / x_norm, &(&w_c - &x_hat * cos[c]), 1.0);
        let g_w = (&x_hat - &w_c * cos[c]) * (g_cos[c] / w_norms[c]);
        grad_class_weights.set_row(c, &g_w.transpose());
    }
    Ok(AamOutput {
        loss,
        logits,
        grad_embedding,
        grad_class_weights,
    })
}
