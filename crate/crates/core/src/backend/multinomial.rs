//! Class-weighted multinomial logistic regression.
//!
//! Objective, normalised by the total trial weight `W = sum_t w[y_t]`:
//!
//! `L(W, b) = (1/W) sum_t w[y_t] * -log softmax(W x_t + b)[y_t] + lambda * ||W||_F^2`
//!
//! Parameters are packed as the `K x P` weight matrix in row-major order
//! followed by the `K` biases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::logsumexp;
use crate::optim::{lbfgs_minimize, OptimizerConfig};

#[derive(Debug, Clone)]
pub struct MultinomialObjective<'a> {
    features: &'a DMatrix<f64>,
    labels: &'a [usize],
    trial_weights: Vec<f64>,
    total_weight: f64,
    n_classes: usize,
    l2_lambda: f64,
}

impl<'a> MultinomialObjective<'a> {
    pub fn new(
        features: &'a DMatrix<f64>,
        labels: &'a [usize],
        class_weights: &[f64],
        l2_lambda: f64,
    ) -> Result<Self> {
        let k = class_weights.len();
        if k < 2 {
            return Err(Error::invalid("multinomial regression needs K >= 2"));
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        if !(l2_lambda >= 0.0) {
            return Err(Error::invalid("l2_lambda must be >= 0"));
        }
        let trial_weights: Vec<f64> = labels.iter().map(|&y| class_weights[y]).collect();
        let total_weight = trial_weights.iter().sum();
        Ok(MultinomialObjective {
            features,
            labels,
            trial_weights,
            total_weight,
            n_classes: k,
            l2_lambda,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * (self.features.ncols() + 1)
    }

    pub fn unpack(&self, params: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (k, p) = (self.n_classes, self.features.ncols());
        let w = DMatrix::from_row_slice(k, p, &params[..k * p]);
        let b = DVector::from_column_slice(&params[k * p..]);
        (w, b)
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (k, p) = (self.n_classes, self.features.ncols());
        let (w, b) = self.unpack(params);
        let mut logits = self.features * w.transpose();
        for mut row in logits.row_iter_mut() {
            row += b.transpose();
        }
        let mut loss = 0.0;
        // per-trial d loss / d logits, overwritten in place
        for (t, &y) in self.labels.iter().enumerate() {
            let lse = logsumexp(logits.row(t).iter().copied().collect::<Vec<_>>());
            let mut row = logits.row_mut(t);
            let wt = self.trial_weights[t] / self.total_weight;
            loss += wt * (lse - row[y]);
            for j in 0..k {
                let prob = (row[j] - lse).exp();
                row[j] = wt * (prob - if j == y { 1.0 } else { 0.0 });
            }
        }
        loss += self.l2_lambda * w.norm_squared();
        let grad_w = logits.transpose() * self.features + &w * (2.0 * self.l2_lambda);
        let mut grad = Vec::with_capacity(k * (p + 1));
        for r in 0..k {
            grad.extend(grad_w.row(r).iter());
        }
        for j in 0..k {
            grad.push(logits.column(j).sum());
        }
        (loss, grad)
    }
}

#[derive(Debug, Clone)]
pub struct MultinomialFit {
    /// `K x P`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub loss: f64,
    pub gradient_norm_inf: f64,
    pub iterations: usize,
    /// `false` when the iteration limit stopped training first.
    pub converged: bool,
}

pub fn fit_multinomial(
    features: &DMatrix<f64>,
    labels: &[usize],
    class_weights: &[f64],
    l2_lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<MultinomialFit> {
    let objective = MultinomialObjective::new(features, labels, class_weights, l2_lambda)?;
    let config = OptimizerConfig {
        max_iter,
        grad_tol: tol,
        ..OptimizerConfig::default()
    };
    let x0 = vec![0.0; objective.n_params()];
    let mut f = |x: &[f64]| objective.value_and_gradient(x);
    let min = lbfgs_minimize(&mut f, &x0, &config)?;
    if !min.converged() {
        log::warn!(
            "multinomial regression stopped after {} iterations ({:?}), |grad|_inf = {:e}",
            min.iterations,
            min.status,
            crate::math::norm_inf(&min.gradient)
        );
    }
    let (weights, bias) = objective.unpack(&min.x);
    Ok(MultinomialFit {
        weights,
        bias,
        loss: min.value,
        gradient_norm_inf: crate::math::norm_inf(&min.gradient),
        iterations: min.iterations,
        converged: min.converged(),
    })
}
