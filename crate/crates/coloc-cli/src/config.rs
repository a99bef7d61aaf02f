//! The optional `--config` TOML file. Every section may be omitted;
//! omitted fields fall back to the same defaults the library uses.

use std::path::Path;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};

use coloc::model::PipelineConfig;
use coloc::modeling::StudyConfig;
use coloc::synth::SimConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Scenario knobs for `coloc simulate`.
    pub simulate: SimConfig,
    /// Full pipeline settings. When omitted, stages read the
    /// `pipeline.toml` their predecessor wrote.
    pub pipeline: Option<PipelineConfig>,
    pub segment: SegmentSection,
    pub collocate: CollocateSection,
    /// Study hyperparameters for `coloc train`.
    pub train: StudyConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    /// Duration string, e.g. "233s" or "3m53s"; omits mean "learn".
    pub mobility_threshold: Option<String>,
    /// Duration string, e.g. "76min"; omits mean "learn".
    pub disconnection_threshold: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollocateSection {
    /// Duration string, e.g. "11m7s"; omits mean "learn".
    pub gap_threshold: Option<String>,
    /// Learn the bridge threshold from every pair, not just groupmates.
    pub learn_all_pairs: bool,
}

/// Load the file if given; otherwise all defaults. Returns the parsed
/// config plus the raw bytes that were hashed into the manifest.
pub fn load(path: Option<&Path>) -> anyhow::Result<(FileConfig, Vec<u8>)> {
    match path {
        None => Ok((FileConfig::default(), Vec::new())),
        Some(p) => {
            let raw = std::fs::read(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            let text = std::str::from_utf8(&raw)
                .with_context(|| format!("config file {} is not UTF-8", p.display()))?;
            let parsed = toml::from_str(text)
                .with_context(|| format!("cannot parse config file {}", p.display()))?;
            Ok((parsed, raw))
        }
    }
}
