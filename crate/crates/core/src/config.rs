//! Pipeline configuration: one TOML file plus environment overrides for the
//! provider endpoint and credentials.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::FilterPolicy;
use crate::provider::{
    FnProvider, HashEmbedder, HttpProvider, ModelProvider, ProviderError, ProviderSettings,
    ScriptedProvider, StructuredClient, Transcript,
};
use crate::ranking::Ranker;
use crate::retrieval::{Method, DEFAULT_K, MAX_K};
use crate::synthetic::{GroundTruth, SimulatedProvider};

pub const ENV_ENDPOINT: &str = "ATTRGRAPH_PROVIDER_ENDPOINT";
pub const ENV_API_KEY: &str = "ATTRGRAPH_PROVIDER_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("provider setup: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub catalog: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub prompts_dir: Option<PathBuf>,
    pub alias_overrides: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub sparse_index: Option<PathBuf>,
    pub dense_index: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            catalog: None,
            work_dir: PathBuf::from("work"),
            prompts_dir: None,
            alias_overrides: None,
            registry: None,
            attributes: None,
            graph: None,
            sparse_index: None,
            dense_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub method: Method,
    pub embedding_dimension: usize,
    pub embedding_seed: u64,
    /// Serve dense queries from the IVF index instead of the exact scan.
    pub ann: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_K,
            method: Method::Dense,
            embedding_dimension: 64,
            embedding_seed: 0,
            ann: false,
        }
    }
}

impl RetrievalConfig {
    pub fn embedder(&self) -> HashEmbedder {
        HashEmbedder::new(self.embedding_dimension, self.embedding_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingConfig {
    pub ranker: Ranker,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig { ranker: Ranker::Graph }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// No model; every call fails and ranking degrades to the fallback scorer.
    None,
    Http,
    /// Answers from a recorded transcript.
    Replay,
    /// Answers from a synthetic catalog's ground truth.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub transcript: Option<PathBuf>,
    /// Replay only: fail unscripted requests instead of returning `{}`.
    pub strict: bool,
    pub truth: Option<PathBuf>,
    pub extraction_drop_rate: Option<f64>,
    pub max_retries: u32,
    pub timeout_ms: u64,
    pub requests_per_second: Option<f64>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::None,
            endpoint: None,
            api_key: None,
            transcript: None,
            strict: true,
            truth: None,
            extraction_drop_rate: None,
            max_retries: 3,
            timeout_ms: 60_000,
            requests_per_second: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub parallelism: usize,
    /// Failure share above which a batch counts as degraded.
    pub failure_threshold: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            parallelism: 4,
            failure_threshold: crate::extraction::DEFAULT_FAILURE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<u8>,
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: crate::eval::DEFAULT_THRESHOLDS.to_vec(),
            ks: crate::eval::DEFAULT_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub catalog: FilterPolicy,
    pub retrieval: RetrievalConfig,
    pub ranking: RankingConfig,
    pub provider: ProviderConfig,
    pub extraction: ExtractionConfig,
    pub eval: EvalConfig,
}

/// Resolved locations of every stage artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub work_dir: PathBuf,
    pub ingested: PathBuf,
    pub products: PathBuf,
    pub registry: PathBuf,
    pub merge_suggestions: PathBuf,
    pub attributes: PathBuf,
    pub graph: PathBuf,
    pub sparse_index: PathBuf,
    pub dense_index: PathBuf,
    pub manifest: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut config = Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        config.resolve_paths(base);
        Ok(config)
    }

    /// Config rooted in `work_dir` with everything else at defaults.
    pub fn with_work_dir(work_dir: impl Into<PathBuf>) -> Self {
        let mut config = PipelineConfig::default();
        config.paths.work_dir = work_dir.into();
        config
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.work_dir);
        for opt in [
            &mut p.catalog,
            &mut p.prompts_dir,
            &mut p.alias_overrides,
            &mut p.registry,
            &mut p.attributes,
            &mut p.graph,
            &mut p.sparse_index,
            &mut p.dense_index,
            &mut self.provider.transcript,
            &mut self.provider.truth,
        ]
        .into_iter()
        .flatten()
        {
            fix(opt);
        }
    }

    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, get: F) {
        if let Some(endpoint) = get(ENV_ENDPOINT).filter(|v| !v.is_empty()) {
            self.provider.endpoint = Some(endpoint);
        }
        if let Some(key) = get(ENV_API_KEY).filter(|v| !v.is_empty()) {
            self.provider.api_key = Some(key);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=MAX_K).contains(&self.retrieval.k) {
            return invalid(format!("retrieval.k must be in 1..={MAX_K}, got {}", self.retrieval.k));
        }
        if self.retrieval.embedding_dimension == 0 {
            return invalid("retrieval.embedding_dimension must be positive".into());
        }
        if self.extraction.parallelism == 0 {
            return invalid("extraction.parallelism must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.extraction.failure_threshold) {
            return invalid("extraction.failure_threshold must be within [0, 1]".into());
        }
        if self.eval.thresholds.iter().any(|&t| t > 100) {
            return invalid("eval.thresholds must be within 0..=100".into());
        }
        if self.eval.ks.contains(&0) {
            return invalid("eval.ks must be positive".into());
        }
        match self.provider.kind {
            ProviderKind::Http if self.provider.endpoint.is_none() => {
                invalid(format!("provider.kind = \"http\" needs provider.endpoint or {ENV_ENDPOINT}"))
            }
            ProviderKind::Replay if self.provider.transcript.is_none() => {
                invalid("provider.kind = \"replay\" needs provider.transcript".into())
            }
            ProviderKind::Simulated if self.provider.truth.is_none() => {
                invalid("provider.kind = \"simulated\" needs provider.truth".into())
            }
            _ => Ok(()),
        }
    }

    pub fn artifacts(&self) -> ArtifactPaths {
        let w = &self.paths.work_dir;
        let pick = |o: &Option<PathBuf>, name: &str| o.clone().unwrap_or_else(|| w.join(name));
        ArtifactPaths {
            work_dir: w.clone(),
            ingested: w.join("ingested.jsonl"),
            products: w.join("products.jsonl"),
            registry: pick(&self.paths.registry, "registry.json"),
            merge_suggestions: w.join("merge_suggestions.json"),
            attributes: pick(&self.paths.attributes, "attributes.jsonl"),
            graph: pick(&self.paths.graph, "graph.jsonl"),
            sparse_index: pick(&self.paths.sparse_index, "sparse_index.json"),
            dense_index: pick(&self.paths.dense_index, "dense_index.bin"),
            manifest: w.join("manifest.json"),
        }
    }

    pub fn provider_settings(&self) -> ProviderSettings {
        let mut settings = match self.provider.kind {
            ProviderKind::Http => ProviderSettings::default(),
            _ => ProviderSettings::immediate(),
        };
        settings.max_retries = self.provider.max_retries.max(1);
        settings.timeout = Duration::from_millis(self.provider.timeout_ms);
        settings.requests_per_second = self.provider.requests_per_second;
        settings
    }

    pub fn build_provider(&self) -> Result<Arc<dyn ModelProvider>, ConfigError> {
        let p = &self.provider;
        let provider: Arc<dyn ModelProvider> = match p.kind {
            ProviderKind::None => Arc::new(FnProvider::new(|_| {
                Err(ProviderError::Rejected("no provider configured".into()))
            })),
            ProviderKind::Http => Arc::new(
                HttpProvider::new(
                    p.endpoint.clone().unwrap_or_default(),
                    p.api_key.clone(),
                    Duration::from_millis(p.timeout_ms),
                )
                .map_err(|e| ConfigError::Provider(e.to_string()))?,
            ),
            ProviderKind::Replay => {
                let path = p.transcript.as_deref().unwrap_or(Path::new(""));
                let transcript = Transcript::load(path)
                    .map_err(|e| ConfigError::Provider(format!("transcript {}: {e}", path.display())))?;
                Arc::new(ScriptedProvider::from_transcript(transcript, p.strict))
            }
            ProviderKind::Simulated => {
                let path = p.truth.as_deref().unwrap_or(Path::new(""));
                let truth = GroundTruth::load(path)
                    .map_err(|e| ConfigError::Provider(format!("truth {}: {e}", path.display())))?;
                let mut sim = SimulatedProvider::new(truth);
                if let Some(rate) = p.extraction_drop_rate {
                    sim = sim.with_extraction_drop_rate(rate);
                }
                Arc::new(sim)
            }
        };
        Ok(provider)
    }

    pub fn build_client(&self) -> Result<StructuredClient, ConfigError> {
        Ok(StructuredClient::new(self.build_provider()?, self.provider_settings()))
    }
}
