use nalgebra::{DMatrix, DVector};

use super::{check_eps, softmax_backward, softmax_vec, FrameSequence, WeightedStats, DEFAULT_EPS_VAR};
use crate::error::{Error, Result};

/// Multi-head attention pooling. Frames are mapped to a shared rectified
/// representation `a_t = relu(W x_t + b)`; head `j` scores frames with
/// `e_t = heads[j] . a_t`, and emits the weighted mean and standard deviation
/// of the raw frames under its own softmax. Output blocks follow head order:
/// `[mean_1; std_1; mean_2; std_2; ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    /// `A x H`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `J x A`, one scoring vector per head.
    pub heads: DMatrix<f64>,
    pub eps_var: f64,
}

pub(crate) struct MhaForward {
    pre: DMatrix<f64>,
    act: DMatrix<f64>,
    alphas: Vec<DVector<f64>>,
    stats: Vec<WeightedStats>,
}

impl MhaForward {
    pub(crate) fn head_outputs(&self) -> Vec<DVector<f64>> {
        self.stats.iter().map(WeightedStats::concat).collect()
    }
}

impl MhaParams {
    pub fn zeros(n_att: usize, n_heads: usize, channels: usize) -> Self {
        MhaParams {
            w: DMatrix::zeros(n_att, channels),
            b: DVector::zeros(n_att),
            heads: DMatrix::zeros(n_heads, n_att),
            eps_var: DEFAULT_EPS_VAR,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.heads.nrows()
    }

    pub fn n_att(&self) -> usize {
        self.w.nrows()
    }

    fn check(&self, channels: usize) -> Result<()> {
        check_eps(self.eps_var)?;
        if self.n_heads() == 0 {
            return Err(Error::invalid("n_heads must be >= 1"));
        }
        if self.w.ncols() != channels {
            return Err(Error::DimensionMismatch { expected: self.w.ncols(), actual: channels });
        }
        if self.b.len() != self.n_att() || self.heads.ncols() != self.n_att() {
            return Err(Error::invalid("MHA bias and head vectors must have length n_att"));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &DMatrix<f64>) -> MhaForward {
        let mut pre = x * self.w.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.b.transpose();
        }
        let act = pre.map(|z| z.max(0.0));
        let energies = &act * self.heads.transpose();
        let alphas: Vec<DVector<f64>> = (0..self.n_heads())
            .map(|j| softmax_vec(&energies.column(j).into_owned()))
            .collect();
        let stats = alphas
            .iter()
            .map(|a| WeightedStats::compute(x, a, self.eps_var))
            .collect();
        MhaForward { pre, act, alphas, stats }
    }

    /// Upstream gradient is given per head as a `2H` block.
    pub(crate) fn backward(&self, x: &DMatrix<f64>, fwd: &MhaForward, g_heads: &[&[f64]]) -> (DMatrix<f64>, MhaParams) {
        let (t_len, h) = x.shape();
        let mut g_x = DMatrix::zeros(t_len, h);
        let mut g_energies = DMatrix::zeros(t_len, self.n_heads());
        for (j, g) in g_heads.iter().enumerate() {
            let (g_alpha, gx) = fwd.stats[j].backward(x, &fwd.alphas[j], &g[..h], &g[h..]);
            g_x += gx;
            g_energies.set_column(j, &softmax_backward(&fwd.alphas[j], &g_alpha));
        }
        let g_heads_w = g_energies.tr_mul(&fwd.act);
        let mut g_pre = &g_energies * &self.heads;
        g_pre.zip_apply(&fwd.pre, |g, z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let g_w = g_pre.tr_mul(x);
        let g_b = g_pre.row_sum().transpose();
        g_x += &g_pre * &self.w;
        (
            g_x,
            MhaParams { w: g_w, b: g_b, heads: g_heads_w, eps_var: self.eps_var },
        )
    }

    pub(crate) fn to_vec(&self) -> Vec<f64> {
        self.w
            .transpose()
            .iter()
            .chain(self.b.iter())
            .chain(self.heads.transpose().iter())
            .copied()
            .collect()
    }

    pub(crate) fn n_values(&self) -> usize {
        self.w.len() + self.b.len() + self.heads.len()
    }

    pub(crate) fn with_values(&self, vals: &[f64]) -> Self {
        let (a, h) = self.w.shape();
        let j = self.n_heads();
        let (w, rest) = vals.split_at(a * h);
        let (b, rest) = rest.split_at(a);
        MhaParams {
            w: DMatrix::from_row_slice(a, h, w),
            b: DVector::from_column_slice(b),
            heads: DMatrix::from_row_slice(j, a, &rest[..j * a]),
            eps_var: self.eps_var,
        }
    }
}

pub fn mha_pool(x: &FrameSequence, params: &MhaParams) -> Result<DVector<f64>> {
    params.check(x.channels())?;
    let heads = params.forward(x.frames()).head_outputs();
    Ok(DVector::from_iterator(
        heads.iter().map(|v| v.len()).sum(),
        heads.iter().flat_map(|v| v.iter().copied()),
    ))
}

/// Global multi-head attention pooling: a second attention level over the MHA
/// head outputs `h_j`, `gamma = softmax_j(u . tanh(V h_j))`, output
/// `sum_j gamma_j h_j` (length `2H`).
#[derive(Debug, Clone, PartialEq)]
pub struct GmhaParams {
    pub mha: MhaParams,
    /// `G x 2H`
    pub v: DMatrix<f64>,
    pub u: DVector<f64>,
}

pub(crate) struct GmhaForward {
    mha: MhaForward,
    head_out: Vec<DVector<f64>>,
    q: Vec<DVector<f64>>,
    gamma: DVector<f64>,
    pub(crate) output: DVector<f64>,
}

impl GmhaParams {
    pub fn zeros(n_att: usize, n_heads: usize, channels: usize, n_global: usize) -> Self {
        GmhaParams {
            mha: MhaParams::zeros(n_att, n_heads, channels),
            v: DMatrix::zeros(n_global, 2 * channels),
            u: DVector::zeros(n_global),
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        self.mha.check(channels)?;
        if self.v.ncols() != 2 * channels || self.v.nrows() != self.u.len() {
            return Err(Error::invalid("GMHA V must be G x 2H and u of length G"));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &DMatrix<f64>) -> GmhaForward {
        let mha = self.mha.forward(x);
        let head_out = mha.head_outputs();
        let q: Vec<DVector<f64>> = head_out.iter().map(|h| (&self.v * h).map(f64::tanh)).collect();
        let scores = DVector::from_iterator(q.len(), q.iter().map(|qj| self.u.dot(qj)));
        let gamma = softmax_vec(&scores);
        let mut output = DVector::zeros(self.v.ncols());
        for (g, h) in gamma.iter().zip(&head_out) {
            output.axpy(*g, h, 1.0);
        }
        GmhaForward { mha, head_out, q, gamma, output }
    }

    pub(crate) fn backward(&self, x: &DMatrix<f64>, fwd: &GmhaForward, g_out: &[f64]) -> (DMatrix<f64>, GmhaParams) {
        let g_out = DVector::from_column_slice(g_out);
        let n_heads = fwd.head_out.len();
        let g_gamma = DVector::from_iterator(n_heads, fwd.head_out.iter().map(|h| g_out.dot(h)));
        let g_scores = softmax_backward(&fwd.gamma, &g_gamma);
        let mut g_u = DVector::zeros(self.u.len());
        let mut g_v = DMatrix::zeros(self.v.nrows(), self.v.ncols());
        let mut g_head_out = Vec::with_capacity(n_heads);
        for j in 0..n_heads {
            g_u.axpy(g_scores[j], &fwd.q[j], 1.0);
            let g_r = (&self.u * g_scores[j]).component_mul(&fwd.q[j].map(|q| 1.0 - q * q));
            g_v.ger(1.0, &g_r, &fwd.head_out[j], 1.0);
            let mut g_h = &g_out * fwd.gamma[j];
            g_h += self.v.tr_mul(&g_r);
            g_head_out.push(g_h);
        }
        let slices: Vec<&[f64]> = g_head_out.iter().map(|g| g.as_slice()).collect();
        let (g_x, g_mha) = self.mha.backward(x, &fwd.mha, &slices);
        (g_x, GmhaParams { mha: g_mha, v: g_v, u: g_u })
    }

    pub(crate) fn to_vec(&self) -> Vec<f64> {
        let mut out = self.mha.to_vec();
        out.extend(self.v.transpose().iter());
        out.extend(self.u.iter());
        out
    }

    pub(crate) fn with_values(&self, vals: &[f64]) -> Self {
        let (vals_mha, rest) = vals.split_at(self.mha.n_values());
        let (g, two_h) = self.v.shape();
        GmhaParams {
            mha: self.mha.with_values(vals_mha),
            v: DMatrix::from_row_slice(g, two_h, &rest[..g * two_h]),
            u: DVector::from_column_slice(&rest[g * two_h..g * two_h + g]),
        }
    }
}

pub fn gmha_pool(x: &FrameSequence, params: &GmhaParams) -> Result<DVector<f64>> {
    params.check(x.channels())?;
    Ok(params.forward(x.frames()).output)
}
