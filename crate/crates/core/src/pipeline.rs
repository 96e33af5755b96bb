//! End-to-end orchestration: backend training, calibration on a dev set and
//! evaluation on a test set, plus the standalone evaluation entry point.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::backend::{fit_backend, BackendConfig, BackendModel, Stage};
use crate::data::{read_embeddings, read_manifest, EmbeddingSet, LanguageList, ScoreMatrix, TrialLabels};
use crate::error::{Error, Result};
use crate::fusion::{calibrate_system, fuse_scores, FusionModel};
use crate::metrics::{MetricReport, DEFAULT_P_TARGET};
use crate::model_io::to_json;
use crate::optim::OptimizerConfig;
use crate::synthetic::labels_of;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub p_target: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { p_target: DEFAULT_P_TARGET }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::invalid(format!("p_target must lie in (0, 1), got {}", self.p_target)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub languages: Option<LanguageList>,
    pub backend: BackendConfig,
    pub fusion: OptimizerConfig,
    pub augment: AugmentConfig,
    pub metrics: MetricConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.backend.validate().map_err(|e| e.in_stage("config.backend"))?;
        self.fusion.validate().map_err(|e| e.in_stage("config.fusion"))?;
        self.augment.validate().map_err(|e| e.in_stage("config.augment"))?;
        self.metrics.validate().map_err(|e| e.in_stage("config.metrics"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn languages(&self) -> Result<&LanguageList> {
        self.languages
            .as_ref()
            .ok_or_else(|| Error::invalid("no language list configured"))
    }
}

/// Everything the pipeline computes, before anything is written.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub backend: BackendModel,
    pub calibration: FusionModel,
    pub test_raw: ScoreMatrix,
    pub test_calibrated: ScoreMatrix,
    pub raw_report: MetricReport,
    pub report: MetricReport,
    pub dev_cllr_raw: f64,
    pub dev_cllr_calibrated: f64,
    pub stages: Vec<&'static str>,
    pub warnings: Vec<String>,
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Normalize => "normalize",
        Stage::Center => "center",
        Stage::Lda => "lda",
        Stage::Classify => "classify",
    }
}

/// Trains on `train`, calibrates on `dev`, evaluates on `test`. Every error
/// is tagged with the stage that raised it.
pub fn run_pipeline_sets(
    config: &PipelineConfig,
    languages: &LanguageList,
    train: &EmbeddingSet,
    dev: &EmbeddingSet,
    test: &EmbeddingSet,
) -> Result<PipelineRun> {
    config.validate()?;
    let k = languages.len();
    let mut stages = Vec::new();

    let fit = fit_backend(train, languages, &config.backend).map_err(|e| e.in_stage("train-backend"))?;
    stages.extend(fit.stages.iter().map(|&s| stage_name(s)));
    let mut warnings = fit.warnings;

    let dev_raw = fit.model.score(dev).map_err(|e| e.in_stage("score"))?;
    let test_raw = fit.model.score(test).map_err(|e| e.in_stage("score"))?;
    stages.push("score");

    let dev_labels = labels_of(dev, k).map_err(|e| e.in_stage("calibrate"))?;
    let cal = calibrate_system(&dev_raw, &dev_labels, &config.fusion).map_err(|e| e.in_stage("calibrate"))?;
    if !cal.optimum.converged() {
        warnings.push(format!("calibration stopped with status {:?}", cal.optimum.status));
    }
    stages.push("calibrate");

    let test_labels = labels_of(test, k).map_err(|e| e.in_stage("evaluate"))?;
    let evaluate = || -> Result<_> {
        let calibrated = fuse_scores(&cal.model, std::slice::from_ref(&test_raw))?;
        let p = config.metrics.p_target;
        Ok((
            MetricReport::compute(&test_raw, &test_labels, p)?,
            MetricReport::compute(&calibrated, &test_labels, p)?,
            calibrated,
        ))
    };
    let (raw_report, report, test_calibrated) = evaluate().map_err(|e| e.in_stage("evaluate"))?;
    stages.push("evaluate");

    Ok(PipelineRun {
        backend: fit.model,
        calibration: cal.model,
        test_raw,
        test_calibrated,
        raw_report,
        report,
        dev_cllr_raw: cal.initial_cllr,
        dev_cllr_calibrated: cal.trained_cllr,
        stages,
        warnings,
    })
}

/// A manifest and the embedding file holding one row per manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPaths {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
}

impl SplitPaths {
    /// Embeddings default to the manifest path with extension `.emb`.
    pub fn from_manifest(manifest: impl Into<PathBuf>) -> Self {
        let manifest = manifest.into();
        let embeddings = manifest.with_extension("emb");
        SplitPaths { manifest, embeddings }
    }

    pub fn load(&self, languages: &LanguageList) -> Result<EmbeddingSet> {
        let utts = read_manifest(&self.manifest, languages)
            .map_err(|e| Error::invalid(format!("{}: {e}", self.manifest.display())))?;
        read_embeddings(&self.embeddings)?.with_manifest(&utts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub p_target: f64,
    pub raw: MetricReport,
    pub calibrated: MetricReport,
    pub dev_cllr_raw: f64,
    pub dev_cllr_calibrated: f64,
    pub warnings: Vec<String>,
}

pub const BACKEND_FILE: &str = "backend.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const TEST_SCORES_FILE: &str = "test_scores.tsv";
pub const TEST_RAW_SCORES_FILE: &str = "test_scores_raw.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const STAGE_LOG_FILE: &str = "stages.log";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(dir: &Path, name: &str, bytes: &[u8], produced: &mut Vec<ProducedFile>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let digest = Sha256::digest(bytes);
    produced.push(ProducedFile {
        path: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    });
    Ok(())
}

fn score_bytes(s: &ScoreMatrix) -> Vec<u8> {
    let mut buf = Vec::new();
    s.write_to(&mut buf).expect("writing to memory");
    buf
}

/// Writes the run's artifacts to `out_dir` and returns the file manifest,
/// which is also written as `manifest.json`. Output is byte-stable for a
/// given run.
pub fn write_artifacts(run: &PipelineRun, p_target: f64, out_dir: &Path) -> Result<Vec<ProducedFile>> {
    let write = || -> Result<Vec<ProducedFile>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut produced = Vec::new();
        // Same bytes as save_model, so stepwise and pipeline runs compare equal.
        write_file(out_dir, BACKEND_FILE, format!("{}\n", to_json(&run.backend)?).as_bytes(), &mut produced)?;
        write_file(out_dir, CALIBRATION_FILE, format!("{}\n", to_json(&run.calibration)?).as_bytes(), &mut produced)?;
        write_file(out_dir, TEST_RAW_SCORES_FILE, &score_bytes(&run.test_raw), &mut produced)?;
        write_file(out_dir, TEST_SCORES_FILE, &score_bytes(&run.test_calibrated), &mut produced)?;
        let report = PipelineReport {
            p_target,
            raw: run.raw_report,
            calibrated: run.report,
            dev_cllr_raw: run.dev_cllr_raw,
            dev_cllr_calibrated: run.dev_cllr_calibrated,
            warnings: run.warnings.clone(),
        };
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_file(out_dir, REPORT_FILE, json.as_bytes(), &mut produced)?;
        let mut log: String = run.stages.iter().map(|s| format!("{s}\n")).collect();
        log.push_str("write\n");
        write_file(out_dir, STAGE_LOG_FILE, log.as_bytes(), &mut produced)?;
        let mut manifest = serde_json::to_string_pretty(&produced)?;
        manifest.push('\n');
        let path = out_dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        Ok(produced)
    };
    write().map_err(|e| e.in_stage("write"))
}

/// File-based pipeline: loads the three splits, runs, writes artifacts.
pub fn run_pipeline(
    config: &PipelineConfig,
    train: &SplitPaths,
    dev: &SplitPaths,
    test: &SplitPaths,
    out_dir: &Path,
) -> Result<(PipelineRun, Vec<ProducedFile>)> {
    config.validate()?;
    let languages = config.languages().map_err(|e| e.in_stage("load"))?;
    let load = |s: &SplitPaths| s.load(languages).map_err(|e| e.in_stage("load"));
    let (train, dev, test) = (load(train)?, load(dev)?, load(test)?);
    let mut run = run_pipeline_sets(config, languages, &train, &dev, &test)?;
    run.stages.insert(0, "load");
    let files = write_artifacts(&run, config.metrics.p_target, out_dir)?;
    Ok((run, files))
}

/// Scores against labels from a manifest; the language list comes from the
/// score file header.
pub fn run_evaluate(scores_path: &Path, labels_path: &Path, p_target: f64) -> Result<MetricReport> {
    let scores = ScoreMatrix::read(scores_path).map_err(|e| e.in_stage("load"))?;
    let utts = read_manifest(labels_path, scores.languages())
        .map_err(|e| Error::invalid(format!("{}: {e}", labels_path.display())).in_stage("load"))?;
    let labels = TrialLabels::from_utterances(&utts, scores.n_languages()).map_err(|e| e.in_stage("load"))?;
    MetricReport::compute(&scores, &labels, p_target).map_err(|e| e.in_stage("evaluate"))
}
