//! Central-difference verification of analytic gradients.
//!
//! Every checked operation is exposed as a scalar function of one flat
//! coordinate vector. Pooling layers are reduced to a scalar through a fixed
//! random projection of their output; losses are used directly.
//!
//! The analytic gradients are computed in double precision. The numeric side
//! differences an independent scalar implementation of the same function,
//! evaluated in double-double so that its own rounding does not swamp small
//! derivative entries. The plain double-precision difference is reported
//! alongside for reference.

pub mod dd;
pub mod reference;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use self::dd::Dd;
use self::reference::PoolDims;
use crate::backend::MultinomialObjective;
use crate::data::LanguageList;
use crate::fusion::CllrObjective;
use crate::metrics::POSTERIOR_FLOOR;
use crate::pooling::{aam_loss, AamParams, AttentiveParams, GmhaParams, MhaParams, PoolingParams};

/// Relative error floor used in the denominator.
pub const REL_FLOOR: f64 = 1e-8;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_MAX_COORDS: usize = 200;
pub const DEFAULT_INSTANCES: usize = 20;

pub trait Differentiable {
    /// Current coordinates.
    fn point(&self) -> Vec<f64>;
    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>);
    /// The same function from the scalar reference implementation.
    fn reference_value(&self, theta: &[f64]) -> Dd;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    /// Against the double-double reference difference.
    pub max_rel_error: f64,
    /// Against a double-precision difference of the checked implementation.
    pub max_rel_error_double: f64,
    pub coords_checked: usize,
    pub worst_coord: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient at `op.point()` with central differences.
/// When the operation has more than `max_coords` coordinates, a random subset
/// of that size is checked.
pub fn grad_check<D: Differentiable + ?Sized>(op: &D, step: f64, max_coords: usize, rng: &mut impl Rng) -> GradCheck {
    let theta = op.point();
    let (_, analytic) = op.value_and_gradient(&theta);
    let n = theta.len();
    let coords: Vec<usize> = if n > max_coords {
        let mut c = sample(rng, n, max_coords).into_vec();
        c.sort_unstable();
        c
    } else {
        (0..n).collect()
    };
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        max_rel_error_double: 0.0,
        coords_checked: coords.len(),
        worst_coord: 0,
    };
    let mut probe = theta.clone();
    for &i in &coords {
        // divide by the step actually taken after rounding
        let (hi, lo) = (theta[i] + step, theta[i] - step);
        probe[i] = hi;
        let (plus, plus_ref) = (op.value_and_gradient(&probe).0, op.reference_value(&probe));
        probe[i] = lo;
        let (minus, minus_ref) = (op.value_and_gradient(&probe).0, op.reference_value(&probe));
        probe[i] = theta[i];
        let numeric = ((plus_ref - minus_ref) / (Dd::new(hi) - Dd::new(lo))).to_f64();
        let err = relative_error(analytic[i], numeric);
        if err > worst.max_rel_error || err.is_nan() {
            worst.max_rel_error = err;
            worst.worst_coord = i;
        }
        let err_double = relative_error(analytic[i], (plus - minus) / (hi - lo));
        if err_double > worst.max_rel_error_double || err_double.is_nan() {
            worst.max_rel_error_double = err_double;
        }
    }
    worst
}

/// A pooling layer scored as `projection . pool(frames)`, differentiable in
/// the frames and every parameter. Coordinates: frames (row-major), then the
/// parameters in declaration order, matrices row-major.
#[derive(Debug, Clone)]
pub struct PoolingInstance {
    pub frames: DMatrix<f64>,
    pub params: PoolingParams,
    pub projection: DVector<f64>,
}

impl PoolingInstance {
    fn split(&self, theta: &[f64]) -> (DMatrix<f64>, PoolingParams) {
        let (t, h) = self.frames.shape();
        let (xs, ps) = theta.split_at(t * h);
        let x = DMatrix::from_row_slice(t, h, xs);
        let params = match &self.params {
            PoolingParams::AttentiveStats(p) => PoolingParams::AttentiveStats(p.with_values(ps)),
            PoolingParams::Mha(p) => PoolingParams::Mha(p.with_values(ps)),
            PoolingParams::Gmha(p) => PoolingParams::Gmha(p.with_values(ps)),
        };
        (x, params)
    }

    fn dims(&self) -> PoolDims {
        let (frames, channels) = self.frames.shape();
        let (n_att, n_heads, n_global, eps_var) = match &self.params {
            PoolingParams::AttentiveStats(p) => (p.n_att(), 1, 0, p.eps_var),
            PoolingParams::Mha(p) => (p.n_att(), p.n_heads(), 0, p.eps_var),
            PoolingParams::Gmha(p) => (p.mha.n_att(), p.mha.n_heads(), p.u.len(), p.mha.eps_var),
        };
        PoolDims { frames, channels, n_att, n_heads, n_global, eps_var }
    }
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}

impl Differentiable for PoolingInstance {
    fn point(&self) -> Vec<f64> {
        let mut out: Vec<f64> = row_major(&self.frames).collect();
        out.extend(match &self.params {
            PoolingParams::AttentiveStats(p) => p.to_vec(),
            PoolingParams::Mha(p) => p.to_vec(),
            PoolingParams::Gmha(p) => p.to_vec(),
        });
        out
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (x, params) = self.split(theta);
        let h = x.ncols();
        let r = self.projection.as_slice();
        let (value, g_x, g_params) = match &params {
            PoolingParams::AttentiveStats(p) => {
                let fwd = p.forward(&x);
                let out = fwd.stats.concat();
                let (gx, gp) = p.backward(&x, &fwd, r);
                (out.dot(&self.projection), gx, gp.to_vec())
            }
            PoolingParams::Mha(p) => {
                let fwd = p.forward(&x);
                let out: Vec<f64> = fwd.head_outputs().iter().flat_map(|v| v.iter().copied()).collect();
                let blocks: Vec<&[f64]> = r.chunks(2 * h).collect();
                let (gx, gp) = p.backward(&x, &fwd, &blocks);
                (crate::math::dot(&out, r), gx, gp.to_vec())
            }
            PoolingParams::Gmha(p) => {
                let fwd = p.forward(&x);
                let (gx, gp) = p.backward(&x, &fwd, r);
                (fwd.output.dot(&self.projection), gx, gp.to_vec())
            }
        };
        let mut grad: Vec<f64> = row_major(&g_x).collect();
        grad.extend(g_params);
        (value, grad)
    }

    fn reference_value(&self, theta: &[f64]) -> Dd {
        let d = self.dims();
        let r = self.projection.as_slice();
        match &self.params {
            PoolingParams::AttentiveStats(_) => reference::attentive(theta, d, r),
            PoolingParams::Mha(_) => reference::mha(theta, d, r),
            PoolingParams::Gmha(_) => reference::gmha(theta, d, r),
        }
    }
}

/// AAM loss as a function of the embedding followed by the class weights
/// (row-major).
#[derive(Debug, Clone)]
pub struct AamInstance {
    pub embedding: DVector<f64>,
    pub label: usize,
    pub params: AamParams,
}

impl Differentiable for AamInstance {
    fn point(&self) -> Vec<f64> {
        self.embedding
            .iter()
            .copied()
            .chain(row_major(&self.params.class_weights))
            .collect()
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let h = self.embedding.len();
        let k = self.params.class_weights.nrows();
        let x = DVector::from_column_slice(&theta[..h]);
        let params = AamParams {
            class_weights: DMatrix::from_row_slice(k, h, &theta[h..]),
            ..self.params.clone()
        };
        let out = aam_loss(&x, self.label, &params).expect("valid AAM instance");
        let mut grad: Vec<f64> = out.grad_embedding.iter().copied().collect();
        grad.extend(row_major(&out.grad_class_weights));
        (out.loss, grad)
    }

    fn reference_value(&self, theta: &[f64]) -> Dd {
        let (k, h) = self.params.class_weights.shape();
        reference::aam(theta, h, k, self.label, self.params.margin, self.params.scale)
    }
}

/// Class-weighted multinomial logistic loss in its packed parameters.
#[derive(Debug, Clone)]
pub struct MultinomialInstance {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_weights: Vec<f64>,
    pub l2_lambda: f64,
    pub params: Vec<f64>,
}

impl Differentiable for MultinomialInstance {
    fn point(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        MultinomialObjective::new(&self.features, &self.labels, &self.class_weights, self.l2_lambda)
            .expect("valid multinomial instance")
            .value_and_gradient(theta)
    }

    fn reference_value(&self, theta: &[f64]) -> Dd {
        reference::multinomial(theta, &self.features, &self.labels, &self.class_weights, self.l2_lambda)
    }
}

/// Fused-score Cllr in the per-system scales and per-language offsets.
#[derive(Debug, Clone)]
pub struct CllrInstance {
    pub objective: CllrObjective,
    pub systems: Vec<DMatrix<f64>>,
    pub truth: Vec<usize>,
    pub params: Vec<f64>,
}

impl Differentiable for CllrInstance {
    fn point(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.objective.value_and_gradient(theta)
    }

    fn reference_value(&self, theta: &[f64]) -> Dd {
        reference::cllr(theta, &self.systems, &self.truth, POSTERIOR_FLOOR)
    }
}

/// `r . (A x)`; its derivative `A' r` is exact.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    pub a: DMatrix<f64>,
    pub r: DVector<f64>,
    pub x: DVector<f64>,
}

impl Differentiable for LinearInstance {
    fn point(&self) -> Vec<f64> {
        self.x.iter().copied().collect()
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let x = DVector::from_column_slice(theta);
        let g = self.a.tr_mul(&self.r);
        ((&self.a * x).dot(&self.r), g.iter().copied().collect())
    }

    fn reference_value(&self, theta: &[f64]) -> Dd {
        reference::linear(theta, &self.a, self.r.as_slice())
    }
}

/// Random instances used by the verification suite.
pub mod instances {
    use super::*;

    fn gauss(rng: &mut impl Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
        let d = Normal::new(0.0, sd).unwrap();
        DMatrix::from_fn(rows, cols, |_, _| d.sample(rng))
    }

    fn gauss_vec(rng: &mut impl Rng, n: usize, sd: f64) -> DVector<f64> {
        let d = Normal::new(0.0, sd).unwrap();
        DVector::from_fn(n, |_, _| d.sample(rng))
    }

    fn projected(rng: &mut impl Rng, frames: DMatrix<f64>, params: PoolingParams) -> PoolingInstance {
        let out = params.output_dim(frames.ncols());
        PoolingInstance {
            frames,
            params,
            projection: gauss_vec(rng, out, 1.0),
        }
    }

    pub fn attentive(rng: &mut impl Rng, t: usize, h: usize, n_att: usize) -> PoolingInstance {
        let frames = gauss(rng, t, h, 1.0);
        let p = AttentiveParams {
            w: gauss(rng, n_att, h, 0.5),
            b: gauss_vec(rng, n_att, 0.1),
            v: gauss_vec(rng, n_att, 1.0),
            eps_var: crate::pooling::DEFAULT_EPS_VAR,
        };
        projected(rng, frames, PoolingParams::AttentiveStats(p))
    }

    fn mha_params(rng: &mut impl Rng, h: usize, n_att: usize, n_heads: usize) -> MhaParams {
        MhaParams {
            w: gauss(rng, n_att, h, 0.5),
            b: gauss_vec(rng, n_att, 0.1),
            heads: gauss(rng, n_heads, n_att, 1.0),
            eps_var: crate::pooling::DEFAULT_EPS_VAR,
        }
    }

    pub fn mha(rng: &mut impl Rng, t: usize, h: usize, n_att: usize, n_heads: usize) -> PoolingInstance {
        let frames = gauss(rng, t, h, 1.0);
        let p = mha_params(rng, h, n_att, n_heads);
        projected(rng, frames, PoolingParams::Mha(p))
    }

    pub fn gmha(rng: &mut impl Rng, t: usize, h: usize, n_att: usize, n_heads: usize, n_global: usize) -> PoolingInstance {
        let frames = gauss(rng, t, h, 1.0);
        let p = GmhaParams {
            mha: mha_params(rng, h, n_att, n_heads),
            v: gauss(rng, n_global, 2 * h, 0.5),
            u: gauss_vec(rng, n_global, 1.0),
        };
        projected(rng, frames, PoolingParams::Gmha(p))
    }

    /// Default margin and scale.
    pub fn aam(rng: &mut impl Rng, k: usize, h: usize) -> AamInstance {
        AamInstance {
            embedding: gauss_vec(rng, h, 1.0),
            label: rng.gen_range(0..k),
            params: AamParams::new(gauss(rng, k, h, 1.0)),
        }
    }

    pub fn multinomial(rng: &mut impl Rng, n: usize, p: usize, k: usize) -> MultinomialInstance {
        let features = gauss(rng, n, p, 1.0);
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
        let class_weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let params: Vec<f64> = (0..k * (p + 1)).map(|_| StandardNormal.sample(rng)).collect();
        MultinomialInstance { features, labels, class_weights, l2_lambda: 0.01, params }
    }

    pub fn cllr(rng: &mut impl Rng, n: usize, k: usize, s: usize) -> CllrInstance {
        let systems: Vec<DMatrix<f64>> = (0..s).map(|_| gauss(rng, n, k, 2.0)).collect();
        let truth: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
        let languages = LanguageList::new((0..k).map(|i| format!("L{i}"))).unwrap();
        let objective = CllrObjective::from_aligned(systems.clone(), truth.clone(), languages).expect("valid instance");
        let params: Vec<f64> = (0..s + k).map(|_| Normal::new(0.5, 0.5).unwrap().sample(rng)).collect();
        CllrInstance { objective, systems, truth, params }
    }

    pub fn linear(rng: &mut impl Rng, rows: usize, cols: usize) -> LinearInstance {
        LinearInstance {
            a: gauss(rng, rows, cols, 1.0),
            r: gauss_vec(rng, rows, 1.0),
            x: gauss_vec(rng, cols, 1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub max_rel_error_double: f64,
    pub threshold: f64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Runs every gradient check on `instances` random instances each.
pub fn run_suite(seed: u64, instances: usize, step: f64) -> Vec<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut run = |name: &'static str, threshold: f64, rng: &mut ChaCha8Rng, make: &mut dyn FnMut(&mut ChaCha8Rng) -> Box<dyn Differentiable>| {
        let (mut worst, mut worst_double) = (0.0f64, 0.0f64);
        for _ in 0..instances {
            let op = make(rng);
            let r = grad_check(op.as_ref(), step, DEFAULT_MAX_COORDS, rng);
            worst = worst.max(r.max_rel_error);
            worst_double = worst_double.max(r.max_rel_error_double);
        }
        rows.push(SuiteRow { name, instances, max_rel_error: worst, max_rel_error_double: worst_double, threshold });
    };
    run("attentive_stats", 1e-6, &mut rng, &mut |r| Box::new(instances::attentive(r, 7, 4, 5)));
    run("mha", 1e-6, &mut rng, &mut |r| Box::new(instances::mha(r, 11, 8, 6, 3)));
    run("gmha", 1e-6, &mut rng, &mut |r| Box::new(instances::gmha(r, 9, 5, 6, 3, 4)));
    run("aam_loss", 1e-6, &mut rng, &mut |r| Box::new(instances::aam(r, 6, 8)));
    run("multinomial_loss", 1e-6, &mut rng, &mut |r| Box::new(instances::multinomial(r, 40, 5, 4)));
    run("cllr_fusion", 1e-6, &mut rng, &mut |r| Box::new(instances::cllr(r, 60, 4, 3)));
    run("linear", 1e-10, &mut rng, &mut |r| Box::new(instances::linear(r, 4, 6)));
    rows
}
