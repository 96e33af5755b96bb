use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lidkit_core::augment::AugmentConfig;
use lidkit_core::backend::BackendConfig;
use lidkit_core::data::LanguageList;
use lidkit_core::optim::OptimizerConfig;
use lidkit_core::pipeline::{MetricConfig, PipelineConfig};
use serde::de::DeserializeOwned;

use crate::Cli;

/// Which part of a pipeline config a subcommand reads, so a file holding
/// only that part is accepted too.
#[derive(Debug, Clone, Copy)]
pub enum Section {
    Backend,
    Fusion,
    Augment,
    Metrics,
    Full,
}

fn parse_section<T: DeserializeOwned>(text: &str) -> Option<T> {
    serde_json::from_str(text).ok()
}

/// Loads `--config` (or defaults) and applies the global overrides. A file
/// that parses as the subcommand's own section is taken as that section;
/// anything else must be a full pipeline config.
pub fn load(cli: &Cli, section: Section) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut config = PipelineConfig::default();
            let bare = match section {
                Section::Backend => parse_section::<BackendConfig>(&text).map(|c| config.backend = c),
                Section::Fusion => parse_section::<OptimizerConfig>(&text).map(|c| config.fusion = c),
                Section::Augment => parse_section::<AugmentConfig>(&text).map(|c| config.augment = c),
                Section::Metrics => parse_section::<MetricConfig>(&text).map(|c| config.metrics = c),
                Section::Full => None,
            };
            if bare.is_none() {
                config = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            }
            config
        }
    };
    if let Some(path) = &cli.languages {
        config.languages = Some(LanguageList::read(path)?);
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.augment.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Languages named by the labels of a manifest, in first-seen order; used
/// when no list is configured and labels only need to parse.
pub fn languages_in_manifest(path: &Path) -> Result<LanguageList> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut names: Vec<String> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            // Malformed lines are reported with line numbers by the real parse.
            Err(_) => continue,
        };
        if let Some(label) = value.get("label").and_then(|l| l.as_str()) {
            if !names.iter().any(|n| n == label) {
                names.push(label.to_string());
            }
        }
    }
    if names.is_empty() {
        names.push("unlabelled".into());
    }
    Ok(LanguageList::new(names)?)
}

pub fn require_languages(config: &PipelineConfig) -> Result<&LanguageList> {
    match &config.languages {
        Some(l) => Ok(l),
        None => bail!("no language list: pass --languages or set \"languages\" in the config"),
    }
}
