//! AugMix-style waveform augmentation.
//!
//! Each of `n_paths` copies of the input runs through a random chain of
//! reverb, noise and speed transforms. The copies are mixed with Dirichlet
//! weights `w` and the mixture is interpolated with the clean signal:
//!
//! `out = (1 - m) x + m sum_i w_i path_i(x)`, clipped to `[-1, 1]`.
//!
//! `m` is the weight of the augmented mixture, so `m = 0` returns the clean
//! input unchanged. Speed-changed paths are cropped or zero-padded back to
//! the input length before mixing.

mod transforms;
mod wav;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Dirichlet, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use transforms::{
    apply_noise, apply_reverb, apply_speed, convolve_truncated, resample, resample_by, reverberate, scaled_noise,
};
pub use wav::{encode_pcm16, read_wav, read_wav_native, write_wav};

use crate::data::Utterance;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("empty buffer".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be > 0".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::Audio(format!("sample {i} is {} (outside [-1, 1])", samples[i])));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        transforms::rms(&self.samples)
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Reverb,
    Noise,
    Speed,
}

impl TransformKind {
    fn name(self) -> &'static str {
        match self {
            TransformKind::Reverb => "reverb",
            TransformKind::Noise => "noise",
            TransformKind::Speed => "speed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub n_paths: usize,
    pub max_chain_len: usize,
    pub transforms: Vec<TransformKind>,
    pub snr_range_db: [f64; 2],
    pub speed_factors: Vec<f64>,
    pub dirichlet_alpha: f64,
    pub beta_alpha: f64,
    pub rir_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            n_paths: 3,
            max_chain_len: 3,
            transforms: vec![TransformKind::Reverb, TransformKind::Noise],
            snr_range_db: [0.0, 15.0],
            speed_factors: vec![0.9, 1.0, 1.1],
            dirichlet_alpha: 1.0,
            beta_alpha: 1.0,
            rir_dir: None,
            noise_dir: None,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be >= 1"));
        }
        if self.max_chain_len == 0 {
            return Err(Error::invalid("max_chain_len must be >= 1"));
        }
        if self.transforms.is_empty() {
            return Err(Error::invalid("at least one transform must be enabled"));
        }
        for (i, t) in self.transforms.iter().enumerate() {
            if self.transforms[..i].contains(t) {
                return Err(Error::invalid(format!("transform {} listed twice", t.name())));
            }
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("snr_range_db must satisfy low <= high, got [{lo}, {hi}]")));
        }
        if self.transforms.contains(&TransformKind::Speed) && self.speed_factors.is_empty() {
            return Err(Error::invalid("speed enabled with no speed_factors"));
        }
        if let Some(f) = self.speed_factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::invalid(format!("speed factors must be > 0, got {f}")));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::invalid("dirichlet_alpha must be > 0"));
        }
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(Error::invalid("beta_alpha must be > 0"));
        }
        Ok(())
    }
}

/// Named impulse responses and noise recordings, all at one sample rate.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub rirs: Vec<(String, AudioBuffer)>,
    pub noises: Vec<(String, AudioBuffer)>,
}

fn load_dir(dir: &Path) -> Result<Vec<(String, AudioBuffer)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, read_wav(&p)?))
        })
        .collect()
}

impl Resources {
    /// Loads every `.wav` in the configured directories, sorted by file name.
    pub fn load(config: &AugmentConfig) -> Result<Self> {
        let rirs = match &config.rir_dir {
            Some(d) => load_dir(d)?,
            None => Vec::new(),
        };
        let noises = match &config.noise_dir {
            Some(d) => load_dir(d)?,
            None => Vec::new(),
        };
        Ok(Resources { rirs, noises })
    }

    fn find<'a>(list: &'a [(String, AudioBuffer)], name: &str, what: &str) -> Result<&'a AudioBuffer> {
        list.iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::Audio(format!("{what} {name:?} not found in resources")))
    }
}

/// One transform with its sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum Step {
    Reverb { rir: String },
    /// `offset` is the start position in the noise recording as a fraction
    /// of its length.
    Noise { noise: String, snr_db: f64, offset: f64 },
    Speed { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub paths: Vec<Vec<Step>>,
    pub path_weights: Vec<f64>,
    pub interp: f64,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() || self.paths.len() != self.path_weights.len() {
            return Err(Error::invalid("plan needs one weight per path and at least one path"));
        }
        let total: f64 = self.path_weights.iter().sum();
        if self.path_weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("path weights must be non-negative and sum to 1"));
        }
        if !(0.0..=1.0).contains(&self.interp) {
            return Err(Error::invalid("interp must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn sample_plan(config: &AugmentConfig, resources: &Resources, seed: u64) -> Result<AugmentPlan> {
    config.validate()?;
    for kind in &config.transforms {
        let (empty, dir) = match kind {
            TransformKind::Reverb => (resources.rirs.is_empty(), &config.rir_dir),
            TransformKind::Noise => (resources.noises.is_empty(), &config.noise_dir),
            TransformKind::Speed => (false, &None),
        };
        if empty {
            let dir = dir.as_ref().map_or("<unset>".to_string(), |d| d.display().to_string());
            return Err(Error::Audio(format!("{} is enabled but its resource directory {dir} is empty", kind.name())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [snr_lo, snr_hi] = config.snr_range_db;
    let mut paths = Vec::with_capacity(config.n_paths);
    for _ in 0..config.n_paths {
        let len = rng.gen_range(1..=config.max_chain_len);
        let chain = (0..len)
            .map(|_| match *config.transforms.choose(&mut rng).expect("validated non-empty") {
                TransformKind::Reverb => Step::Reverb {
                    rir: resources.rirs.choose(&mut rng).expect("checked").0.clone(),
                },
                TransformKind::Noise => Step::Noise {
                    noise: resources.noises.choose(&mut rng).expect("checked").0.clone(),
                    snr_db: if snr_lo == snr_hi { snr_lo } else { rng.gen_range(snr_lo..snr_hi) },
                    offset: rng.gen::<f64>(),
                },
                TransformKind::Speed => Step::Speed {
                    factor: *config.speed_factors.choose(&mut rng).expect("validated non-empty"),
                },
            })
            .collect();
        paths.push(chain);
    }
    let path_weights = if config.n_paths == 1 {
        vec![1.0]
    } else {
        let d = Dirichlet::new_with_size(config.dirichlet_alpha, config.n_paths)
            .map_err(|e| Error::invalid(format!("dirichlet: {e}")))?;
        d.sample(&mut rng)
    };
    let beta = Beta::new(config.beta_alpha, config.beta_alpha).map_err(|e| Error::invalid(format!("beta: {e}")))?;
    let interp = beta.sample(&mut rng);
    Ok(AugmentPlan { paths, path_weights, interp, seed })
}

fn fit_length(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.resize(len, 0.0);
    v
}

pub fn apply_step(x: &AudioBuffer, step: &Step, resources: &Resources) -> Result<AudioBuffer> {
    match step {
        Step::Reverb { rir } => apply_reverb(x, Resources::find(&resources.rirs, rir, "impulse response")?),
        Step::Noise { noise, snr_db, offset } => {
            let n = Resources::find(&resources.noises, noise, "noise")?;
            let start = ((offset.clamp(0.0, 1.0) * n.len() as f64) as usize).min(n.len() - 1);
            apply_noise(x, n, *snr_db, start)
        }
        Step::Speed { factor } => apply_speed(x, *factor),
    }
}

pub fn augmix(x: &AudioBuffer, plan: &AugmentPlan, resources: &Resources) -> Result<AudioBuffer> {
    plan.validate()?;
    if plan.interp == 0.0 {
        return Ok(x.clone());
    }
    let mut mix = vec![0.0; x.len()];
    for (chain, &w) in plan.paths.iter().zip(&plan.path_weights) {
        let mut y = x.clone();
        for step in chain {
            y = apply_step(&y, step, resources)?;
        }
        let y = fit_length(y.into_samples(), x.len());
        for (m, v) in mix.iter_mut().zip(&y) {
            *m += w * v;
        }
    }
    let m = plan.interp;
    let out = x
        .samples()
        .iter()
        .zip(&mix)
        .map(|(a, b)| ((1.0 - m) * a + m * b).clamp(-1.0, 1.0))
        .collect();
    AudioBuffer::new(out, x.sample_rate())
}

/// Per-utterance seed from the run seed and the utterance id, independent of
/// processing order.
pub fn utterance_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(id.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentLogEntry {
    pub id: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub plan: AugmentPlan,
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Augments every utterance with audio. Relative audio paths resolve against
/// `base_dir`; outputs are written as `<out_dir>/<id>.wav`.
pub fn augment_manifest(
    utterances: &[Utterance],
    base_dir: &Path,
    config: &AugmentConfig,
    resources: &Resources,
    out_dir: &Path,
) -> Result<Vec<AugmentLogEntry>> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut log = Vec::with_capacity(utterances.len());
    for utt in utterances {
        let Some(audio) = &utt.audio_path else {
            return Err(Error::invalid(format!("utterance {:?} has no audio path", utt.id)));
        };
        let input = base_dir.join(audio);
        let x = read_wav(&input)?;
        let plan = sample_plan(config, resources, utterance_seed(config.seed, &utt.id))?;
        let y = augmix(&x, &plan, resources)?;
        let output = out_dir.join(format!("{}.wav", file_stem_for(&utt.id)));
        write_wav(&output, &y)?;
        log.push(AugmentLogEntry { id: utt.id.clone(), input, output, plan });
    }
    Ok(log)
}
