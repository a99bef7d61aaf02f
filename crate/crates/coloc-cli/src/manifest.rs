//! Per-stage run manifests. A manifest pins everything that determines a
//! stage's output: tool version, stage name, seed, config-file hash,
//! command-line overrides, and the hashes of every input file. Two runs
//! with identical manifests (ignoring timings) produce byte-identical
//! outputs; `output_hashes` lets callers check exactly that.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stage: String,
    /// Only stages that consume randomness record one.
    pub seed: Option<u64>,
    /// Hash of the raw `--config` file bytes (hash of empty input when
    /// no file was given).
    pub config_hash: String,
    /// Raw command-line override strings, keyed by flag name.
    pub overrides: BTreeMap<String, String>,
    /// Input artifact name -> content hash.
    pub input_hashes: BTreeMap<String, String>,
    /// Output artifact name -> content hash.
    pub output_hashes: BTreeMap<String, String>,
    /// Wall-clock phase timings. Informational only: the one field that
    /// legitimately differs between otherwise identical runs.
    pub timings_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    pub fn new(stage: &str, config_hash: &str) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.to_string(),
            seed: None,
            config_hash: config_hash.to_string(),
            overrides: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            output_hashes: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn record_override(&mut self, flag: &str, value: impl ToString) {
        self.overrides.insert(flag.to_string(), value.to_string());
    }

    pub fn hash_input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.input_hashes.insert(name.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn hash_output(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.output_hashes.insert(name.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(7 + 2 * digest.len());
    out.push_str("sha256:");
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Parse a human duration into whole seconds. Accepts bare seconds
/// ("233"), single units ("233s", "76min", "2h"), and compounds
/// ("11m7s", "1h15m").
pub fn parse_duration_secs(input: &str) -> anyhow::Result<i64> {
    let s = input.trim();
    if s.is_empty() {
        anyhow::bail!("empty duration");
    }
    if s.bytes().all(|b| b.is_ascii_digit()) {
        return s
            .parse::<i64>()
            .with_context(|| format!("duration {s:?} out of range"));
    }
    let mut total: i64 = 0;
    let mut rest = s;
    while !rest.is_empty() {
        let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits == 0 {
            anyhow::bail!("bad duration {input:?}: expected a number at {rest:?}");
        }
        let value: i64 = rest[..digits]
            .parse()
            .with_context(|| format!("duration {input:?} out of range"))?;
        rest = &rest[digits..];
        let unit_len = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_alphabetic()).len();
        let unit = &rest[..unit_len];
        rest = &rest[unit_len..];
        let per: i64 = match unit {
            "s" | "sec" | "secs" | "second" | "seconds" => 1,
            "m" | "min" | "mins" | "minute" | "minutes" => 60,
            "h" | "hr" | "hrs" | "hour" | "hours" => 3600,
            "" => anyhow::bail!("bad duration {input:?}: missing unit after {value}"),
            other => anyhow::bail!("bad duration {input:?}: unknown unit {other:?}"),
        };
        total = value
            .checked_mul(per)
            .and_then(|v| total.checked_add(v))
            .with_context(|| format!("duration {input:?} out of range"))?;
    }
    Ok(total)
}
