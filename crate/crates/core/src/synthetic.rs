//! Gaussian class-conditional embeddings standing in for a trained extractor.
//!
//! Language `k` has mean `class_separation * u_k`, where the `u_k` are random
//! orthonormal directions (random unit vectors when `dim < n_languages`).
//! Samples add isotropic Gaussian noise with standard deviation
//! `noise_scale` per dimension.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, LanguageList, TrialLabels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassCounts {
    Uniform(usize),
    PerClass(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_languages: usize,
    pub dim: usize,
    pub counts: ClassCounts,
    pub class_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_languages < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 languages"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("synthetic dim must be >= 1"));
        }
        match &self.counts {
            ClassCounts::Uniform(0) => return Err(Error::invalid("per-class count must be >= 1")),
            ClassCounts::PerClass(c) if c.len() != self.n_languages => {
                return Err(Error::DimensionMismatch { expected: self.n_languages, actual: c.len() })
            }
            ClassCounts::PerClass(c) if c.contains(&0) => return Err(Error::invalid("per-class counts must be >= 1")),
            _ => {}
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid("class_separation must be >= 0"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale must be >= 0"));
        }
        Ok(())
    }

    pub fn count(&self, class: usize) -> usize {
        match &self.counts {
            ClassCounts::Uniform(n) => *n,
            ClassCounts::PerClass(c) => c[class],
        }
    }

    pub fn languages(&self) -> LanguageList {
        let width = (self.n_languages - 1).to_string().len();
        LanguageList::new((0..self.n_languages).map(|k| format!("lang{k:0width$}"))).expect("distinct names")
    }
}

/// Class means and a seeded sampler around them.
#[derive(Debug, Clone)]
pub struct Generator {
    means: Vec<DVector<f64>>,
    noise_scale: f64,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (d, k) = (spec.dim, spec.n_languages);
        let raw = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
        let dirs = if d >= k {
            raw.qr().q()
        } else {
            let mut m = raw;
            for mut c in m.column_iter_mut() {
                let n = c.norm();
                c /= n;
            }
            m
        };
        let means = (0..k).map(|j| dirs.column(j) * spec.class_separation).collect();
        Ok(Generator { means, noise_scale: spec.noise_scale, rng })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    /// `counts[k]` fresh samples of each class, grouped by class. Ids are
    /// `<prefix><row>`.
    pub fn sample(&mut self, counts: &[usize], prefix: &str) -> Result<EmbeddingSet> {
        if counts.len() != self.means.len() {
            return Err(Error::DimensionMismatch { expected: self.means.len(), actual: counts.len() });
        }
        let n: usize = counts.iter().sum();
        let d = self.dim();
        let mut vectors = DMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    vectors[(row, j)] = self.means[k][j] + self.noise_scale * z;
                }
                labels.push(k);
                row += 1;
            }
        }
        let ids = (0..n).map(|i| format!("{prefix}{i:06}")).collect();
        EmbeddingSet::new(ids, vectors, Some(labels))
    }
}

/// Trial labels for a labelled embedding set.
pub fn labels_of(set: &EmbeddingSet, n_languages: usize) -> Result<TrialLabels> {
    let labels = set.labels().ok_or_else(|| Error::invalid("embedding set has no labels"))?;
    TrialLabels::new(set.ids().to_vec(), labels.to_vec(), n_languages)
}

/// Train, dev and test sets from one generator: the spec's counts for
/// training and `eval_per_class` per language for dev and test.
pub fn splits(spec: &SyntheticSpec, eval_per_class: usize) -> Result<[EmbeddingSet; 3]> {
    let mut gen = Generator::new(spec)?;
    let k = spec.n_languages;
    let train_counts: Vec<usize> = (0..k).map(|c| spec.count(c)).collect();
    let train = gen.sample(&train_counts, "train-")?;
    let dev = gen.sample(&vec![eval_per_class; k], "dev-")?;
    let test = gen.sample(&vec![eval_per_class; k], "test-")?;
    Ok([train, dev, test])
}
