//! The run manifest: everything needed to reproduce or audit a run.
//!
//! Deterministic by construction — no timestamps, no absolute paths — so a
//! replayed run produces a byte-identical manifest on any machine.

use echo_core::gateway::GatewayStats;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InferenceCounts {
    pub sampling: u64,
    pub unification: u64,
    pub evaluation: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub preset: String,
    pub dataset: String,
    pub corpus_items: usize,
    pub k: usize,
    pub m: usize,
    pub iterations: u32,
    pub seeds: BTreeMap<String, u64>,
    pub cache_mode: String,
    pub cache_stats: GatewayStats,
    pub inference_counts: InferenceCounts,
    /// Artifact name → path relative to the output directory. Every file the
    /// run wrote is listed here.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<f64>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Stable hash of the manifest content.
    pub fn hash(&self) -> String {
        echo_core::gateway::content_key(&serde_json::to_value(self).expect("manifest serializes"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
