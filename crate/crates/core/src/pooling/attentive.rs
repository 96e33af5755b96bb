use nalgebra::{DMatrix, DVector};

use super::{check_eps, softmax_backward, softmax_vec, FrameSequence, WeightedStats, DEFAULT_EPS_VAR};
use crate::error::{Error, Result};

/// Attentive statistics pooling: `e_t = v' tanh(W x_t + b)`,
/// `alpha = softmax_t(e)`, output `[mean; std]` under `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveParams {
    /// `A x H`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: DVector<f64>,
    pub eps_var: f64,
}

pub(crate) struct AttentiveForward {
    hidden: DMatrix<f64>,
    alpha: DVector<f64>,
    pub(crate) stats: WeightedStats,
}

impl AttentiveParams {
    pub fn zeros(n_att: usize, channels: usize) -> Self {
        AttentiveParams {
            w: DMatrix::zeros(n_att, channels),
            b: DVector::zeros(n_att),
            v: DVector::zeros(n_att),
            eps_var: DEFAULT_EPS_VAR,
        }
    }

    pub fn n_att(&self) -> usize {
        self.w.nrows()
    }

    fn check(&self, channels: usize) -> Result<()> {
        check_eps(self.eps_var)?;
        if self.w.ncols() != channels {
            return Err(Error::DimensionMismatch { expected: self.w.ncols(), actual: channels });
        }
        if self.b.len() != self.n_att() || self.v.len() != self.n_att() {
            return Err(Error::invalid("attention bias and vector must have length n_att"));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &DMatrix<f64>) -> AttentiveForward {
        let mut hidden = x * self.w.transpose();
        for mut row in hidden.row_iter_mut() {
            row += self.b.transpose();
        }
        hidden.apply(|z| *z = z.tanh());
        let alpha = softmax_vec(&(&hidden * &self.v));
        let stats = WeightedStats::compute(x, &alpha, self.eps_var);
        AttentiveForward { hidden, alpha, stats }
    }

    /// Returns `(d/dx, d/dparams)` for upstream gradient `g_out` (`2H`).
    pub(crate) fn backward(&self, x: &DMatrix<f64>, fwd: &AttentiveForward, g_out: &[f64]) -> (DMatrix<f64>, AttentiveParams) {
        let h = x.ncols();
        let (g_alpha, mut g_x) = fwd.stats.backward(x, &fwd.alpha, &g_out[..h], &g_out[h..]);
        let g_e = softmax_backward(&fwd.alpha, &g_alpha);
        let g_v = fwd.hidden.tr_mul(&g_e);
        // d e / d hidden = v, through tanh
        let mut g_z = &g_e * self.v.transpose();
        g_z.zip_apply(&fwd.hidden, |g, hv| *g *= 1.0 - hv * hv);
        let g_w = g_z.tr_mul(x);
        let g_b = g_z.row_sum().transpose();
        g_x += &g_z * &self.w;
        (
            g_x,
            AttentiveParams { w: g_w, b: g_b, v: g_v, eps_var: self.eps_var },
        )
    }

    pub(crate) fn to_vec(&self) -> Vec<f64> {
        self.w.transpose().iter().chain(self.b.iter()).chain(self.v.iter()).copied().collect()
    }

    pub(crate) fn with_values(&self, vals: &[f64]) -> Self {
        let (a, h) = self.w.shape();
        AttentiveParams {
            w: DMatrix::from_row_slice(a, h, &vals[..a * h]),
            b: DVector::from_column_slice(&vals[a * h..a * h + a]),
            v: DVector::from_column_slice(&vals[a * h + a..a * h + 2 * a]),
            eps_var: self.eps_var,
        }
    }
}

pub fn attentive_stats_pool(x: &FrameSequence, params: &AttentiveParams) -> Result<DVector<f64>> {
    params.check(x.channels())?;
    Ok(params.forward(x.frames()).stats.concat())
}
