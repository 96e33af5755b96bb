//! Linear score calibration and fusion trained under the multiclass Cllr
//! objective.
//!
//! A fusion model has one scale per input system and one offset per language:
//! `fused[t, k] = sum_s alpha[s] * scores_s[t, k] + beta[k]`. Calibrating a
//! single system is the `S = 1` case.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{LanguageList, ScoreMatrix, TrialLabels};
use crate::error::{Error, Result};
use crate::math::logsumexp;
use crate::metrics::{class_counts, cllr_aligned, POSTERIOR_FLOOR};
use crate::optim::{lbfgs_minimize, Minimum, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub languages: LanguageList,
}

impl FusionModel {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::invalid("fusion model needs at least one system"));
        }
        if self.betas.len() != self.languages.len() {
            return Err(Error::DimensionMismatch {
                expected: self.languages.len(),
                actual: self.betas.len(),
            });
        }
        if self.alphas.iter().chain(&self.betas).any(|v| !v.is_finite()) {
            return Err(Error::invalid("fusion parameters must be finite"));
        }
        Ok(())
    }

    /// Starting point of training: equal weights, zero offsets.
    pub fn initial(n_systems: usize, languages: LanguageList) -> Self {
        FusionModel {
            alphas: vec![1.0 / n_systems as f64; n_systems],
            betas: vec![0.0; languages.len()],
            languages,
        }
    }

    fn from_params(params: &[f64], n_systems: usize, languages: LanguageList) -> Self {
        FusionModel {
            alphas: params[..n_systems].to_vec(),
            betas: params[n_systems..].to_vec(),
            languages,
        }
    }

    fn params(&self) -> Vec<f64> {
        self.alphas.iter().chain(&self.betas).copied().collect()
    }
}

/// Score matrices of all systems reordered to the row order of the first.
fn align_systems(systems: &[ScoreMatrix]) -> Result<(Vec<String>, LanguageList, Vec<DMatrix<f64>>)> {
    let first = systems
        .first()
        .ok_or_else(|| Error::invalid("no score systems given"))?;
    let languages = first.languages().clone();
    let ids = first.ids().to_vec();
    let index: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut mats = Vec::with_capacity(systems.len());
    for (s, sys) in systems.iter().enumerate() {
        if sys.languages() != &languages {
            return Err(Error::invalid(format!(
                "system {s}: language list differs from system 0"
            )));
        }
        if sys.n_trials() != ids.len() {
            return Err(Error::invalid(format!(
                "system {s}: {} trials, system 0 has {}",
                sys.n_trials(),
                ids.len()
            )));
        }
        let mut m = DMatrix::zeros(ids.len(), languages.len());
        for (r, id) in sys.ids().iter().enumerate() {
            let &row = index
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("system {s}: id {id:?} not in system 0")))?;
            m.set_row(row, &sys.scores().row(r));
        }
        mats.push(m);
    }
    Ok((ids, languages, mats))
}

fn fuse_matrices(alphas: &[f64], betas: &[f64], systems: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (n, k) = systems[0].shape();
    DMatrix::from_fn(n, k, |t, j| {
        let mut v = betas[j];
        for (a, s) in alphas.iter().zip(systems) {
            v += a * s[(t, j)];
        }
        v
    })
}

pub fn fuse_scores(model: &FusionModel, systems: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    model.validate()?;
    if systems.len() != model.alphas.len() {
        return Err(Error::invalid(format!(
            "model expects {} systems, got {}",
            model.alphas.len(),
            systems.len()
        )));
    }
    let (ids, languages, mats) = align_systems(systems)?;
    if languages != model.languages {
        return Err(Error::invalid("system 0: language list differs from the fusion model"));
    }
    ScoreMatrix::new(ids, fuse_matrices(&model.alphas, &model.betas, &mats), languages)
}

/// Cllr of the fused scores (bits) and its exact gradient in
/// `(alphas, betas)` order.
#[derive(Debug, Clone)]
pub struct CllrObjective {
    systems: Vec<DMatrix<f64>>,
    truth: Vec<usize>,
    /// `1 / (K * ln 2 * N_{y_t})` per trial.
    trial_weight: Vec<f64>,
    languages: LanguageList,
}

impl CllrObjective {
    pub fn new(systems: &[ScoreMatrix], labels: &TrialLabels) -> Result<Self> {
        let (_, languages, mats) = align_systems(systems)?;
        let truth = labels.align(&systems[0])?;
        Self::from_aligned(mats, truth, languages)
    }

    pub fn from_aligned(systems: Vec<DMatrix<f64>>, truth: Vec<usize>, languages: LanguageList) -> Result<Self> {
        let k = languages.len();
        if k < 2 {
            return Err(Error::invalid("Cllr needs at least 2 languages"));
        }
        let counts = class_counts(&truth, k);
        if let Some(l) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyLanguage(languages.name(l).to_string()));
        }
        let scale = k as f64 * std::f64::consts::LN_2;
        let trial_weight = truth.iter().map(|&y| 1.0 / (scale * counts[y] as f64)).collect();
        Ok(CllrObjective {
            systems,
            truth,
            trial_weight,
            languages,
        })
    }

    pub fn n_systems(&self) -> usize {
        self.systems.len()
    }

    pub fn n_params(&self) -> usize {
        self.systems.len() + self.languages.len()
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let s = self.systems.len();
        let k = self.languages.len();
        let (alphas, betas) = params.split_at(s);
        let fused = fuse_matrices(alphas, betas, &self.systems);
        let max_nats = -POSTERIOR_FLOOR.ln();
        let mut value = 0.0;
        let mut grad = vec![0.0; s + k];
        let mut g_row = vec![0.0; k];
        for (t, &y) in self.truth.iter().enumerate() {
            let row = fused.row(t);
            let lse = logsumexp(row.iter().copied());
            let nll = lse - row[y];
            let w = self.trial_weight[t];
            if nll >= max_nats {
                // clamped region is flat
                value += w * max_nats;
                continue;
            }
            value += w * nll;
            for j in 0..k {
                let p = (row[j] - lse).exp();
                g_row[j] = w * (p - if j == y { 1.0 } else { 0.0 });
            }
            for (a, sys) in self.systems.iter().enumerate() {
                grad[a] += (0..k).map(|j| g_row[j] * sys[(t, j)]).sum::<f64>();
            }
            for j in 0..k {
                grad[s + j] += g_row[j];
            }
        }
        (value, grad)
    }
}

pub fn cllr_objective(params: &[f64], systems: &[ScoreMatrix], labels: &TrialLabels) -> Result<(f64, Vec<f64>)> {
    let obj = CllrObjective::new(systems, labels)?;
    if params.len() != obj.n_params() {
        return Err(Error::DimensionMismatch {
            expected: obj.n_params(),
            actual: params.len(),
        });
    }
    Ok(obj.value_and_gradient(params))
}

#[derive(Debug, Clone)]
pub struct FusionTraining {
    pub model: FusionModel,
    /// Dev Cllr at the initial parameters.
    pub initial_cllr: f64,
    pub trained_cllr: f64,
    pub optimum: Minimum,
}

pub fn train_fusion(systems: &[ScoreMatrix], labels: &TrialLabels, config: &OptimizerConfig) -> Result<FusionTraining> {
    let objective = CllrObjective::new(systems, labels)?;
    let init = FusionModel::initial(objective.n_systems(), objective.languages.clone());
    let x0 = init.params();
    let initial_cllr = objective.value_and_gradient(&x0).0;
    let mut f = |p: &[f64]| objective.value_and_gradient(p);
    let optimum = lbfgs_minimize(&mut f, &x0, config)?;
    let model = FusionModel::from_params(&optimum.x, objective.n_systems(), objective.languages.clone());
    let fused = fuse_matrices(&model.alphas, &model.betas, &objective.systems);
    let trained_cllr = cllr_aligned(&fused, &objective.truth, &objective.languages)?;
    log::debug!(
        "fusion: Cllr {initial_cllr:.6} -> {trained_cllr:.6} bits after {} iterations ({:?})",
        optimum.iterations,
        optimum.status
    );
    Ok(FusionTraining {
        model,
        initial_cllr,
        trained_cllr,
        optimum,
    })
}

/// Single-system calibration.
pub fn calibrate_system(system: &ScoreMatrix, labels: &TrialLabels, config: &OptimizerConfig) -> Result<FusionTraining> {
    train_fusion(std::slice::from_ref(system), labels, config)
}
