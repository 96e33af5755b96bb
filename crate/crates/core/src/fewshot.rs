//! Enrollment-size sweep on synthetic embeddings: how detection error falls
//! as the backend sees more utterances per language.

use serde::{Deserialize, Serialize};

use crate::backend::{fit_backend, BackendConfig};
use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::synthetic::{labels_of, Generator, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewshotConfig {
    /// `counts` is the enrollment pool per language; sizes draw nested
    /// prefixes of it.
    pub spec: SyntheticSpec,
    pub sizes: Vec<usize>,
    /// Each seed regenerates the class means, pool and test set.
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_p_target")]
    pub p_target: f64,
}

fn default_test_per_class() -> usize {
    200
}

fn default_p_target() -> f64 {
    crate::metrics::DEFAULT_P_TARGET
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewshotRow {
    pub size: usize,
    /// Means over seeds.
    pub eer_percent: f64,
    pub c_avg: f64,
    pub min_c_avg: f64,
    pub per_seed_eer_percent: Vec<f64>,
}

/// Takes the first `size` rows of every class from a class-grouped set.
fn enrollment_subset(pool: &EmbeddingSet, size: usize) -> Result<EmbeddingSet> {
    let labels = pool.labels().ok_or_else(|| Error::invalid("pool has no labels"))?;
    let mut taken = vec![0usize; labels.iter().max().map_or(0, |m| m + 1)];
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&r| {
            let y = labels[r];
            taken[y] += 1;
            taken[y] <= size
        })
        .collect();
    pool.subset(&rows)
}

pub fn run_fewshot_experiment(config: &FewshotConfig) -> Result<Vec<FewshotRow>> {
    let spec = &config.spec;
    spec.validate()?;
    config.backend.validate()?;
    if config.sizes.is_empty() || config.seeds.is_empty() {
        return Err(Error::invalid("fewshot needs at least one size and one seed"));
    }
    if config.sizes.contains(&0) {
        return Err(Error::invalid("enrollment sizes must be >= 1"));
    }
    if config.test_per_class == 0 {
        return Err(Error::invalid("test_per_class must be >= 1"));
    }
    let k = spec.n_languages;
    let pool_min = (0..k).map(|c| spec.count(c)).min().expect("k >= 2");
    if let Some(&big) = config.sizes.iter().find(|&&s| s > pool_min) {
        return Err(Error::invalid(format!(
            "enrollment size {big} exceeds the generated pool of {pool_min} per language"
        )));
    }
    let languages = spec.languages();
    let mut per_size: Vec<Vec<MetricReport>> = vec![Vec::new(); config.sizes.len()];
    for &seed in &config.seeds {
        let seeded = SyntheticSpec { seed, ..spec.clone() };
        let mut gen = Generator::new(&seeded)?;
        let pool_counts: Vec<usize> = (0..k).map(|c| seeded.count(c)).collect();
        let pool = gen.sample(&pool_counts, "enroll-")?;
        let test = gen.sample(&vec![config.test_per_class; k], "test-")?;
        let test_labels = labels_of(&test, k)?;
        for (i, &size) in config.sizes.iter().enumerate() {
            let train = enrollment_subset(&pool, size)?;
            let fit = fit_backend(&train, &languages, &config.backend)?;
            let scores = fit.model.score(&test)?;
            per_size[i].push(MetricReport::compute(&scores, &test_labels, config.p_target)?);
        }
    }
    let mean = |v: &[MetricReport], f: fn(&MetricReport) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    Ok(config
        .sizes
        .iter()
        .zip(&per_size)
        .map(|(&size, reports)| FewshotRow {
            size,
            eer_percent: mean(reports, |r| r.eer_percent),
            c_avg: mean(reports, |r| r.c_avg),
            min_c_avg: mean(reports, |r| r.min_c_avg),
            per_seed_eer_percent: reports.iter().map(|r| r.eer_percent).collect(),
        })
        .collect())
}

/// Whitespace-separated columns for plotting EER against size on log axes.
pub fn fewshot_data_file(rows: &[FewshotRow]) -> String {
    let mut out = String::from("# size eer_percent c_avg min_c_avg\n");
    for r in rows {
        out.push_str(&format!("{} {} {} {}\n", r.size, r.eer_percent, r.c_avg, r.min_c_avg));
    }
    out
}
