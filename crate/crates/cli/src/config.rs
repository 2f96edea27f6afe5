//! Run configuration: one TOML file per run, every flag overridable on the
//! command line, secrets only via environment.

use echo_core::corpus::DatasetKind;
use echo_core::embedding::{EmbedderSpec, EmbeddingProvider};
use echo_core::gateway::{CacheMode, MockModel, Provider, RequestTemplate};
use echo_core::sampling::{SelectionCriteria, SelectionStrategy, Tokenizer};
use echo_core::seeds::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

pub use echo_core::gateway::API_KEY_ENV;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {detail}")]
    File { path: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyPreset {
    ZeroShot,
    ZeroShotCot,
    FewShot,
    FewShotCot,
    AutoCot,
    Echo,
}

impl StrategyPreset {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyPreset::ZeroShot => "zero-shot",
            StrategyPreset::ZeroShotCot => "zero-shot-cot",
            StrategyPreset::FewShot => "few-shot",
            StrategyPreset::FewShotCot => "few-shot-cot",
            StrategyPreset::AutoCot => "auto-cot",
            StrategyPreset::Echo => "echo",
        }
    }

    /// Does this preset build its demonstrations from the corpus?
    pub fn builds_demos(&self) -> bool {
        matches!(self, StrategyPreset::AutoCot | StrategyPreset::Echo)
    }

    /// Does this preset read demonstrations from a manual file?
    pub fn needs_manual_demos(&self) -> bool {
        matches!(self, StrategyPreset::FewShot | StrategyPreset::FewShotCot)
    }
}

impl fmt::Display for StrategyPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyPreset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-shot" => Ok(StrategyPreset::ZeroShot),
            "zero-shot-cot" => Ok(StrategyPreset::ZeroShotCot),
            "few-shot" => Ok(StrategyPreset::FewShot),
            "few-shot-cot" => Ok(StrategyPreset::FewShotCot),
            "auto-cot" => Ok(StrategyPreset::AutoCot),
            "echo" => Ok(StrategyPreset::Echo),
            other => Err(ConfigError::Invalid(format!(
                "unknown preset {other:?}; expected zero-shot, zero-shot-cot, few-shot, few-shot-cot, auto-cot, or echo"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// "deterministic-local" or "remote".
    pub kind: String,
    pub dim: usize,
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub batch_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: "deterministic-local".into(),
            dim: 64,
            seed: None,
            endpoint: None,
            model: None,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// "openai", "mock", or "replay-only".
    pub provider: String,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub concurrency: usize,
    pub cache_mode: CacheMode,
    /// Defaults to `<output_dir>/cache.jsonl`.
    pub cache_path: Option<PathBuf>,
    /// Constant completion for the mock provider.
    pub mock_response: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            provider: "openai".into(),
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0301".into(),
            temperature: 0.0,
            max_tokens: 1024,
            concurrency: 4,
            cache_mode: CacheMode::Record,
            cache_path: None,
            mock_response: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// "centroid", "random", or "same-cluster".
    pub strategy: String,
    /// Target cluster for "same-cluster".
    pub target_cluster: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: "centroid".into(),
            target_cluster: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConfig {
    pub max_question_tokens: usize,
    pub max_rationale_steps: usize,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        CriteriaConfig {
            max_question_tokens: 60,
            max_rationale_steps: 5,
        }
    }
}

/// The full run configuration, as written in the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub dataset_kind: String,
    pub preset: StrategyPreset,
    /// Demonstrations entering unification; defaults to m.
    pub k: Option<usize>,
    /// Output demonstrations; defaults to the dataset preset.
    pub m: Option<usize>,
    /// Unification iterations (T).
    pub iterations: u32,
    /// Master seed; per-stage seeds derive from it.
    pub seed: u64,
    /// Halve the demonstration count.
    pub half: bool,
    /// Manual demonstrations file (few-shot presets, or an echo run seeded
    /// from hand-written rationales).
    pub manual_demos: Option<PathBuf>,
    /// Evaluate on a different corpus than the one demos are built from.
    pub eval_corpus_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub selection: SelectionConfig,
    pub criteria: CriteriaConfig,
    pub embedder: EmbedderConfig,
    pub gateway: GatewayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: PathBuf::from("corpus.jsonl"),
            dataset_kind: "generic".into(),
            preset: StrategyPreset::Echo,
            k: None,
            m: None,
            iterations: 1,
            seed: 0,
            half: false,
            manual_demos: None,
            eval_corpus_path: None,
            output_dir: PathBuf::from("runs/out"),
            selection: SelectionConfig::default(),
            criteria: CriteriaConfig::default(),
            embedder: EmbedderConfig::default(),
            gateway: GatewayConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Check invariants and fill derived values.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let kind: DatasetKind = self
            .dataset_kind
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("{e}")))?;
        let mut m = self.m.unwrap_or_else(|| kind.default_demo_count());
        if self.half {
            m = (m / 2).max(1);
        }
        let k = self.k.unwrap_or(m);
        if m == 0 {
            return Err(ConfigError::Invalid("m must be positive".into()));
        }
        if k < m {
            return Err(ConfigError::Invalid(format!(
                "k={k} must be at least m={m}"
            )));
        }
        match self.preset {
            StrategyPreset::AutoCot => {
                if self.iterations != 0 {
                    return Err(ConfigError::Invalid(format!(
                        "auto-cot forces iterations=0, got {}",
                        self.iterations
                    )));
                }
                if k != m {
                    return Err(ConfigError::Invalid(format!(
                        "auto-cot forces k == m, got k={k}, m={m}"
                    )));
                }
            }
            StrategyPreset::Echo if self.iterations < 1 => {
                return Err(ConfigError::Invalid(
                    "echo requires iterations >= 1".into(),
                ));
            }
            _ => {}
        }
        if self.preset.needs_manual_demos() && self.manual_demos.is_none() {
            return Err(ConfigError::Invalid(format!(
                "preset {} needs manual_demos",
                self.preset
            )));
        }
        let selection = match self.selection.strategy.as_str() {
            "centroid" => SelectionStrategy::Centroid,
            "random" => SelectionStrategy::Random {
                seed: derive_seed(self.seed, "sample"),
            },
            "same-cluster" => SelectionStrategy::SameCluster {
                cluster_index: self.selection.target_cluster,
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown selection strategy {other:?}; expected centroid, random, or same-cluster"
                )))
            }
        };
        let embedder = match self.embedder.kind.as_str() {
            "deterministic-local" => {
                let seed = self
                    .embedder
                    .seed
                    .unwrap_or_else(|| derive_seed(self.seed, "embed"));
                let mut spec = EmbedderSpec::deterministic_local(seed, self.embedder.dim)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                spec.batch_size = self.embedder.batch_size;
                spec
            }
            "remote" => {
                let endpoint = self.embedder.endpoint.clone().ok_or_else(|| {
                    ConfigError::Invalid("remote embedder needs an endpoint".into())
                })?;
                let model = self.embedder.model.clone().ok_or_else(|| {
                    ConfigError::Invalid("remote embedder needs a model".into())
                })?;
                let mut spec = EmbedderSpec::remote(endpoint, model);
                spec.batch_size = self.embedder.batch_size;
                spec
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown embedder kind {other:?}; expected deterministic-local or remote"
                )))
            }
        };
        match self.gateway.provider.as_str() {
            "openai" | "mock" | "replay-only" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown gateway provider {other:?}; expected openai, mock, or replay-only"
                )))
            }
        }
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_string(), self.seed);
        seeds.insert("embed".to_string(), embed_seed_of(&embedder, self.seed));
        seeds.insert("cluster".to_string(), derive_seed(self.seed, "cluster"));
        seeds.insert("sample".to_string(), derive_seed(self.seed, "sample"));
        seeds.insert("harmonize".to_string(), derive_seed(self.seed, "harmonize"));
        Ok(ResolvedConfig {
            raw: self.clone(),
            kind,
            k,
            m,
            iterations: self.iterations,
            selection,
            criteria: SelectionCriteria {
                max_question_tokens: self.criteria.max_question_tokens,
                max_rationale_steps: self.criteria.max_rationale_steps,
                tokenizer: Tokenizer::Whitespace,
            },
            embedder,
            seeds,
        })
    }
}

fn embed_seed_of(spec: &EmbedderSpec, master: u64) -> u64 {
    match spec.provider {
        EmbeddingProvider::DeterministicLocal { seed, .. } => seed,
        EmbeddingProvider::RemoteService { .. } => derive_seed(master, "embed"),
    }
}

/// A validated configuration with every derived value filled in.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub raw: RunConfig,
    pub kind: DatasetKind,
    pub k: usize,
    pub m: usize,
    pub iterations: u32,
    pub selection: SelectionStrategy,
    pub criteria: SelectionCriteria,
    pub embedder: EmbedderSpec,
    pub seeds: BTreeMap<String, u64>,
}

impl ResolvedConfig {
    pub fn cluster_seed(&self) -> u64 {
        self.seeds["cluster"]
    }

    pub fn harmonize_seed(&self) -> u64 {
        self.seeds["harmonize"]
    }

    pub fn template(&self) -> RequestTemplate {
        RequestTemplate {
            model: self.raw.gateway.model.clone(),
            temperature: self.raw.gateway.temperature,
            max_tokens: self.raw.gateway.max_tokens,
            stop: None,
        }
    }

    pub fn cache_path(&self) -> PathBuf {
        self.raw
            .gateway
            .cache_path
            .clone()
            .unwrap_or_else(|| self.raw.output_dir.join("cache.jsonl"))
    }

    pub fn provider(&self) -> Provider {
        match self.raw.gateway.provider.as_str() {
            "mock" => Provider::Mock(MockModel::constant(
                self.raw
                    .gateway
                    .mock_response
                    .clone()
                    .unwrap_or_else(|| "First, consider the problem. The answer is 1.".into()),
            )),
            "replay-only" => Provider::ReplayOnly,
            _ => Provider::OpenAi {
                base_url: self.raw.gateway.base_url.clone(),
                api_key: std::env::var(API_KEY_ENV).ok(),
            },
        }
    }

    /// Stable hash of the full configuration, for the manifest.
    pub fn config_hash(&self) -> String {
        echo_core::gateway::content_key(
            &serde_json::to_value(&self.raw).expect("config serializes"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut config = RunConfig {
            corpus_path: PathBuf::from("data/fixture.jsonl"),
            dataset_kind: "gsm8k".into(),
            preset: StrategyPreset::Echo,
            k: Some(20),
            m: Some(8),
            iterations: 4,
            seed: 1234,
            ..RunConfig::default()
        };
        config.gateway.provider = "mock".into();
        let text = config.to_toml();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn auto_cot_forces_zero_iterations_and_k_equals_m() {
        let config = RunConfig {
            preset: StrategyPreset::AutoCot,
            iterations: 0,
            ..RunConfig::default()
        };
        let resolved = config.resolve().unwrap();
        assert_eq!(resolved.iterations, 0);
        assert_eq!(resolved.k, resolved.m);

        let bad = RunConfig {
            preset: StrategyPreset::AutoCot,
            iterations: 2,
            ..RunConfig::default()
        };
        assert!(bad.resolve().is_err());

        let bad = RunConfig {
            preset: StrategyPreset::AutoCot,
            iterations: 0,
            k: Some(9),
            m: Some(4),
            ..RunConfig::default()
        };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn echo_requires_at_least_one_iteration() {
        let bad = RunConfig {
            preset: StrategyPreset::Echo,
            iterations: 0,
            ..RunConfig::default()
        };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn dataset_presets_set_demo_counts() {
        let config = RunConfig {
            dataset_kind: "aqua".into(),
            ..RunConfig::default()
        };
        assert_eq!(config.resolve().unwrap().m, 4);

        let config = RunConfig {
            dataset_kind: "csqa".into(),
            ..RunConfig::default()
        };
        assert_eq!(config.resolve().unwrap().m, 7);

        let halved = RunConfig {
            dataset_kind: "gsm8k".into(),
            half: true,
            ..RunConfig::default()
        };
        assert_eq!(halved.resolve().unwrap().m, 4);
    }

    #[test]
    fn few_shot_presets_require_manual_demos() {
        let bad = RunConfig {
            preset: StrategyPreset::FewShotCot,
            ..RunConfig::default()
        };
        assert!(bad.resolve().is_err());

        let ok = RunConfig {
            preset: StrategyPreset::FewShotCot,
            manual_demos: Some(PathBuf::from("demos.jsonl")),
            ..RunConfig::default()
        };
        assert!(ok.resolve().is_ok());
    }

    #[test]
    fn stage_seeds_are_derived_and_recorded() {
        let config = RunConfig::default();
        let resolved = config.resolve().unwrap();
        assert_eq!(resolved.seeds["master"], 0);
        assert_eq!(resolved.seeds.len(), 5);
        let other = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        let other = other.resolve().unwrap();
        assert_ne!(resolved.seeds["cluster"], other.seeds["cluster"]);
    }
}
