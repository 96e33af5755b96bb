//! Attention-based pooling layers and the additive angular margin loss, each
//! with an analytic backward pass.
//!
//! These operate on single utterances in double precision and exist to pin
//! down the mathematics; there is no batching or training loop.
//!
//! Shapes (`T` frames, `H` channels, `A` attention units, `J` heads):
//!
//! | variant          | parameters                                        | output    |
//! |------------------|---------------------------------------------------|-----------|
//! | attentive stats  | `w: A x H`, `b: A`, `v: A`                         | `2H`      |
//! | multi-head (MHA) | `w: A x H`, `b: A`, `heads: J x A`                 | `J * 2H`  |
//! | global MHA       | MHA parameters, `v: G x 2H`, `u: G`                | `2H`      |

mod aam;
pub(crate) mod attentive;
pub(crate) mod mha;

pub use aam::{aam_loss, AamOutput, AamParams};
pub use attentive::{attentive_stats_pool, AttentiveParams};
pub use mha::{gmha_pool, mha_pool, GmhaParams, MhaParams};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_VAR: f64 = 1e-10;
pub const DEFAULT_N_ATT: usize = 128;
pub const DEFAULT_N_HEADS: usize = 5;

/// `T x H` frame-level features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: DMatrix<f64>,
}

impl FrameSequence {
    pub fn new(frames: DMatrix<f64>) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::invalid("frame sequence needs T >= 1 and H >= 1"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frame sequence has non-finite entries"));
        }
        Ok(FrameSequence { frames })
    }

    pub fn frames(&self) -> &DMatrix<f64> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingVariant {
    AttentiveStats,
    Mha,
    Gmha,
}

/// Any of the three pooling layers' parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolingParams {
    AttentiveStats(AttentiveParams),
    Mha(MhaParams),
    Gmha(GmhaParams),
}

impl PoolingParams {
    pub fn variant(&self) -> PoolingVariant {
        match self {
            PoolingParams::AttentiveStats(_) => PoolingVariant::AttentiveStats,
            PoolingParams::Mha(_) => PoolingVariant::Mha,
            PoolingParams::Gmha(_) => PoolingVariant::Gmha,
        }
    }

    pub fn output_dim(&self, channels: usize) -> usize {
        match self {
            PoolingParams::AttentiveStats(_) | PoolingParams::Gmha(_) => 2 * channels,
            PoolingParams::Mha(p) => p.n_heads() * 2 * channels,
        }
    }

    pub fn pool(&self, x: &FrameSequence) -> Result<DVector<f64>> {
        match self {
            PoolingParams::AttentiveStats(p) => attentive_stats_pool(x, p),
            PoolingParams::Mha(p) => mha_pool(x, p),
            PoolingParams::Gmha(p) => gmha_pool(x, p),
        }
    }
}

/// Attention-weighted mean and standard deviation of the frames, with the
/// variance floored at `eps_var` inside the square root.
#[derive(Debug, Clone)]
pub(crate) struct WeightedStats {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    /// Whether each channel's variance was above the floor.
    active: Vec<bool>,
}

impl WeightedStats {
    pub fn compute(x: &DMatrix<f64>, alpha: &DVector<f64>, eps_var: f64) -> Self {
        let h = x.ncols();
        let mean = x.tr_mul(alpha);
        let mut std = DVector::zeros(h);
        let mut active = vec![false; h];
        for c in 0..h {
            // centred form; the raw second moment loses digits to cancellation
            let var: f64 = x.column(c).iter().zip(alpha.iter()).map(|(v, a)| a * (v - mean[c]).powi(2)).sum();
            active[c] = var > eps_var;
            std[c] = var.max(eps_var).sqrt();
        }
        WeightedStats { mean, std, active }
    }

    pub fn concat(&self) -> DVector<f64> {
        let h = self.mean.len();
        DVector::from_fn(2 * h, |i, _| if i < h { self.mean[i] } else { self.std[i - h] })
    }

    /// Gradients with respect to the attention weights and the frames.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        alpha: &DVector<f64>,
        g_mean: &[f64],
        g_std: &[f64],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (t_len, h) = x.shape();
        // d std / d var = 1 / (2 std) above the floor, 0 below
        let g_var: Vec<f64> = (0..h)
            .map(|c| if self.active[c] { g_std[c] / (2.0 * self.std[c]) } else { 0.0 })
            .collect();
        // var = E[x^2] - mean^2, so mean also receives -2 mean g_var
        let g_mean_total: Vec<f64> = (0..h).map(|c| g_mean[c] - 2.0 * self.mean[c] * g_var[c]).collect();
        let mut g_alpha = DVector::zeros(t_len);
        let mut g_x = DMatrix::zeros(t_len, h);
        for t in 0..t_len {
            let mut ga = 0.0;
            for c in 0..h {
                let v = x[(t, c)];
                ga += g_mean_total[c] * v + g_var[c] * v * v;
                g_x[(t, c)] = alpha[t] * (g_mean_total[c] + 2.0 * g_var[c] * v);
            }
            g_alpha[t] = ga;
        }
        (g_alpha, g_x)
    }
}

pub(crate) fn softmax_vec(e: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(crate::math::softmax(e.as_slice()))
}

/// Backward through `alpha = softmax(e)`.
pub(crate) fn softmax_backward(alpha: &DVector<f64>, g_alpha: &DVector<f64>) -> DVector<f64> {
    let inner = alpha.dot(g_alpha);
    alpha.component_mul(&g_alpha.add_scalar(-inner))
}

pub(crate) fn check_eps(eps_var: f64) -> Result<()> {
    if !(eps_var > 0.0) {
        return Err(Error::invalid("eps_var must be > 0"));
    }
    Ok(())
}
