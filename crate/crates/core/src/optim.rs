//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The search direction comes from the standard two-loop recursion over the
//! last `history` curvature pairs, with the initial inverse Hessian scaled by
//! `s'y / y'y`. Step lengths are bracketed and then refined by safeguarded
//! cubic interpolation until both the sufficient-decrease and the strong
//! curvature condition hold.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm2, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub history: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            history: 10,
            max_iter: 200,
            grad_tol: 1e-7,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history < 1 {
            return Err(Error::invalid("optimizer history must be >= 1"));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::invalid("Wolfe constants must satisfy 0 < c1 < c2 < 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Gradient infinity-norm fell below `grad_tol`.
    Converged,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the last accepted
    /// iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Objective returning value and gradient.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective for F {
    fn evaluate(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

struct Counted<'a, O: Objective> {
    inner: &'a mut O,
    evaluations: usize,
    iteration: usize,
}

impl<O: Objective> Counted<'_, O> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (f, g) = self.inner.evaluate(x);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective {
                iteration: self.iteration,
                point: x.to_vec(),
            });
        }
        Ok((f, g))
    }
}

pub fn lbfgs_minimize<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    config: &OptimizerConfig,
) -> Result<Minimum> {
    config.validate()?;
    let mut obj = Counted {
        inner: objective,
        evaluations: 0,
        iteration: 0,
    };
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.eval(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history);
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iter {
        if norm_inf(&g) < config.grad_tol {
            status = Status::Converged;
            break;
        }
        obj.iteration = iterations;
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // curvature information went stale; restart from steepest descent
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let initial_step = if history.is_empty() {
            (1.0 / norm2(&g)).min(1.0)
        } else {
            1.0
        };
        let found = line_search(&mut obj, &x, f, &dir, slope, initial_step, config)?;
        let Some(step) = found else {
            status = Status::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * norm2(&s) * norm2(&y) {
            if history.len() == config.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = step.x;
        f = step.f;
        g = step.g;
    }
    if status == Status::MaxIterations && norm_inf(&g) < config.grad_tol {
        status = Status::Converged;
    }
    Ok(Minimum {
        x,
        value: f,
        gradient: g,
        iterations,
        evaluations: obj.evaluations,
        status,
    })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

const MAX_BRACKET: usize = 50;
const MAX_ZOOM: usize = 60;
/// Relative change in `f` treated as roundoff by the approximate Wolfe test.
const F_NOISE: f64 = 1e-12;

/// Approximate Wolfe conditions: near a minimum the change in `f` drowns in
/// roundoff, so sufficient decrease is judged from the directional
/// derivative, which stays accurate there.
fn approx_wolfe(cur: &Trial, f0: f64, slope0: f64, c1: f64, c2: f64) -> bool {
    cur.f <= f0 + F_NOISE * f0.abs() && cur.slope >= c2 * slope0 && cur.slope <= (2.0 * c1 - 1.0) * slope0
}

fn line_search<O: Objective>(
    obj: &mut Counted<O>,
    x: &[f64],
    f0: f64,
    dir: &[f64],
    slope0: f64,
    initial: f64,
    config: &OptimizerConfig,
) -> Result<Option<Trial>> {
    let (c1, c2) = (config.wolfe_c1, config.wolfe_c2);
    let mut probe = |obj: &mut Counted<O>, alpha: f64| -> Result<Trial> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = obj.eval(&xt)?;
        let slope = dot(&g, dir);
        Ok(Trial { alpha, x: xt, f, g, slope })
    };

    let mut prev = Trial {
        alpha: 0.0,
        x: x.to_vec(),
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut alpha = initial;
    for i in 0..MAX_BRACKET {
        let cur = probe(obj, alpha)?;
        if approx_wolfe(&cur, f0, slope0, c1, c2) {
            return Ok(Some(cur));
        }
        if cur.f > f0 + c1 * alpha * slope0 || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, &mut probe, prev, cur, f0, slope0, c1, c2);
        }
        if cur.slope.abs() <= -c2 * slope0 {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            return zoom(obj, &mut probe, cur, prev, f0, slope0, c1, c2);
        }
        alpha *= 2.0;
        prev = cur;
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn zoom<O: Objective>(
    obj: &mut Counted<O>,
    probe: &mut impl FnMut(&mut Counted<O>, f64) -> Result<Trial>,
    mut lo: Trial,
    mut hi: Trial,
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
) -> Result<Option<Trial>> {
    for _ in 0..MAX_ZOOM {
        let alpha = interpolate(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
            break;
        }
        let cur = probe(obj, alpha)?;
        if approx_wolfe(&cur, f0, slope0, c1, c2) {
            return Ok(Some(cur));
        }
        if cur.f > f0 + c1 * alpha * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -c2 * slope0 {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // accept the best sufficient-decrease point if it made progress
    if lo.alpha > 0.0 && lo.f < f0 {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Minimiser of the cubic through both endpoints, kept inside the middle 80%
/// of the interval; bisection when the cubic is degenerate.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let width = b - a;
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (a + b);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = width.signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - width * (hi.slope + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        mid
    } else {
        t
    }
}
