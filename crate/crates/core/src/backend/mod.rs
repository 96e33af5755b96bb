//! Embedding backend: length normalisation, mean centring, optional LDA and a
//! prior-rebalanced multinomial regression classifier.
//!
//! Scoring applies the stages in the order they were fitted:
//! normalise, centre, project, classify.

mod lda;
mod multinomial;

pub use lda::{fit_lda, LdaFit};
pub use multinomial::{fit_multinomial, MultinomialFit, MultinomialObjective};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, LanguageList, ScoreMatrix};
use crate::error::{Error, Result};
use crate::metrics::class_counts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub use_lda: bool,
    pub lda_dim: usize,
    pub lda_shrinkage: f64,
    pub l2_lambda: f64,
    pub rebalance: bool,
    pub max_iter: usize,
    pub tol: f64,
    /// Centre before length-normalising instead of after.
    pub center_first: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            use_lda: false,
            lda_dim: 50,
            lda_shrinkage: 1e-4,
            l2_lambda: 1e-4,
            rebalance: true,
            max_iter: 500,
            tol: 1e-7,
            center_first: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_lda && self.lda_dim < 1 {
            return Err(Error::invalid("lda_dim must be >= 1 when LDA is enabled"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::invalid("l2_lambda must be >= 0"));
        }
        if !(self.lda_shrinkage >= 0.0) {
            return Err(Error::invalid("lda_shrinkage must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendModel {
    pub languages: LanguageList,
    pub mean: Vec<f64>,
    /// `D x P` projection, absent when LDA is disabled.
    #[serde(with = "crate::serde_matrix::option")]
    pub lda: Option<DMatrix<f64>>,
    /// `K x P'`
    #[serde(with = "crate::serde_matrix")]
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub balance_weights: Vec<f64>,
    #[serde(default)]
    pub center_first: bool,
}

impl BackendModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.languages.len();
        let d = self.mean.len();
        let p = match &self.lda {
            Some(lda) => {
                if lda.nrows() != d {
                    return Err(Error::DimensionMismatch { expected: d, actual: lda.nrows() });
                }
                if lda.ncols() > d.min(k.saturating_sub(1)) {
                    return Err(Error::invalid("LDA projection wider than min(K-1, D)"));
                }
                lda.ncols()
            }
            None => d,
        };
        if self.weights.shape() != (k, p) {
            return Err(Error::invalid(format!(
                "weights are {}x{}, expected {k}x{p}",
                self.weights.nrows(),
                self.weights.ncols()
            )));
        }
        if self.bias.len() != k || self.balance_weights.len() != k {
            return Err(Error::invalid("bias and balance weights need one entry per language"));
        }
        if self.balance_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("balance weights must be positive"));
        }
        let sum: f64 = self.balance_weights.iter().sum();
        if (sum - k as f64).abs() > 1e-9 * k as f64 {
            return Err(Error::invalid(format!("balance weights sum to {sum}, expected {k}")));
        }
        let finite = self
            .mean
            .iter()
            .chain(&self.bias)
            .chain(self.weights.iter())
            .chain(self.lda.iter().flat_map(|m| m.iter()))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("backend model has non-finite entries"));
        }
        Ok(())
    }

    /// Feature transform up to (not including) the classifier.
    pub fn transform(&self, vectors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if vectors.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: vectors.ncols(),
            });
        }
        let mean = DVector::from_column_slice(&self.mean);
        let x = if self.center_first {
            length_normalize(&apply_center(vectors, &mean)).0
        } else {
            apply_center(&length_normalize(vectors).0, &mean)
        };
        Ok(match &self.lda {
            Some(p) => x * p,
            None => x,
        })
    }

    pub fn score(&self, embeddings: &EmbeddingSet) -> Result<ScoreMatrix> {
        let features = self.transform(embeddings.vectors())?;
        let mut logits = features * self.weights.transpose();
        for mut row in logits.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        ScoreMatrix::new(embeddings.ids().to_vec(), logits, self.languages.clone())
    }
}

/// Scales every row to unit Euclidean norm. Rows that are exactly zero are
/// left unchanged and their indices returned.
pub fn length_normalize(vectors: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let mut out = vectors.clone();
    let mut zero_rows = Vec::new();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            zero_rows.push(r);
        } else {
            row /= norm;
        }
    }
    if !zero_rows.is_empty() {
        log::warn!("length_normalize: {} zero rows left unchanged", zero_rows.len());
    }
    (out, zero_rows)
}

/// Column mean.
pub fn fit_center(vectors: &DMatrix<f64>) -> DVector<f64> {
    vectors.row_mean().transpose()
}

pub fn apply_center(vectors: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = vectors.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Inverse-frequency class weights normalised to sum to `K`.
pub fn rebalance_weights(counts: &[usize], languages: &LanguageList) -> Result<Vec<f64>> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyLanguage(languages.name(i).to_string()));
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let total: f64 = inv.iter().sum();
    let k = counts.len() as f64;
    Ok(inv.iter().map(|w| k * w / total).collect())
}

/// Fitting stages in execution order, for logging and orchestration checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Normalize,
    Center,
    Lda,
    Classify,
}

#[derive(Debug, Clone)]
pub struct BackendFit {
    pub model: BackendModel,
    pub stages: Vec<Stage>,
    pub warnings: Vec<String>,
    pub classifier: MultinomialFit,
}

pub fn fit_backend(train: &EmbeddingSet, languages: &LanguageList, config: &BackendConfig) -> Result<BackendFit> {
    config.validate()?;
    let labels = train
        .labels()
        .ok_or_else(|| Error::invalid("training embeddings need labels"))?;
    let k = languages.len();
    if k < 2 {
        return Err(Error::invalid("backend needs at least 2 languages"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} languages")));
    }
    let mut stages = Vec::new();
    let mut warnings = Vec::new();

    let (centered, mean) = if config.center_first {
        let mean = fit_center(train.vectors());
        stages.push(Stage::Center);
        let (x, zeros) = length_normalize(&apply_center(train.vectors(), &mean));
        stages.push(Stage::Normalize);
        note_zero_rows(&zeros, &mut warnings);
        (x, mean)
    } else {
        let (x, zeros) = length_normalize(train.vectors());
        stages.push(Stage::Normalize);
        note_zero_rows(&zeros, &mut warnings);
        let mean = fit_center(&x);
        stages.push(Stage::Center);
        (apply_center(&x, &mean), mean)
    };

    let lda = if config.use_lda {
        let cap = (k - 1).min(train.dim());
        let dim = if config.lda_dim > cap {
            let msg = format!(
                "requested LDA dimension {} exceeds min(K-1, D) = {cap}; using {cap}",
                config.lda_dim
            );
            log::warn!("{msg}");
            warnings.push(msg);
            cap
        } else {
            config.lda_dim
        };
        let fit = fit_lda(&centered, labels, k, dim, config.lda_shrinkage)?;
        warnings.extend(fit.warnings);
        stages.push(Stage::Lda);
        Some(fit.projection)
    } else {
        None
    };
    let features = match &lda {
        Some(p) => &centered * p,
        None => centered,
    };

    let counts = class_counts(labels, k);
    let balance_weights = if config.rebalance {
        rebalance_weights(&counts, languages)?
    } else {
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyLanguage(languages.name(i).to_string()));
        }
        vec![1.0; k]
    };
    let classifier = fit_multinomial(
        &features,
        labels,
        &balance_weights,
        config.l2_lambda,
        config.max_iter,
        config.tol,
    )?;
    stages.push(Stage::Classify);
    if !classifier.converged {
        warnings.push(format!(
            "classifier hit max_iter = {} with |grad|_inf = {:e}",
            config.max_iter, classifier.gradient_norm_inf
        ));
    }
    let model = BackendModel {
        languages: languages.clone(),
        mean: mean.iter().copied().collect(),
        lda,
        weights: classifier.weights.clone(),
        bias: classifier.bias.iter().copied().collect(),
        balance_weights,
        center_first: config.center_first,
    };
    Ok(BackendFit {
        model,
        stages,
        warnings,
        classifier,
    })
}

fn note_zero_rows(zeros: &[usize], warnings: &mut Vec<String>) {
    if !zeros.is_empty() {
        warnings.push(format!("{} zero-norm training embeddings", zeros.len()));
    }
}
