//! TOML configuration. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{Mode, DEFAULT_GRAPHQL_URL, DEFAULT_RATE_PER_SEC, DEFAULT_REST_BASE};
use crate::llm::DEFAULT_MAX_IN_FLIGHT;
use crate::vector::{DEFAULT_DIMENSION, DEFAULT_EMBEDDING_MODEL, DEFAULT_K};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(PathBuf),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub api: ApiConfig,
    pub rag: RagConfig,
    pub run: RunConfig,
    pub data: DataConfig,
    pub service: ServiceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub models: Vec<String>,
    /// Agent-1 model; defaults to the generating model.
    pub agent1_model: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub cassette: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    /// HTTP endpoint in live mode, fixture file in cassette mode.
    Http,
    /// Local feature hashing; needs no endpoint and ignores the run mode.
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackend,
    pub endpoint: String,
    pub model: String,
    pub dimension: usize,
    pub timeout_secs: u64,
    pub fixture: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub rest_base: String,
    pub graphql_url: String,
    pub rate_per_sec: f64,
    pub timeout_secs: u64,
    pub cassette: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalPool {
    /// Development split only; no test question can retrieve itself.
    Dev,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub k: usize,
    pub pool: RetrievalPool,
    /// Persisted index; rebuilt in memory when absent or stale.
    pub index: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Random,
    /// Entries tagged `test` form the test split.
    Tags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub test_fraction: f64,
    pub split: SplitMethod,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: PathBuf,
    pub vocabulary: PathBuf,
    pub schema: PathBuf,
    /// Directory of prompt templates overriding the built-in ones.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub cors_origins: Vec<String>,
    pub result_cap: usize,
    pub redact_questions: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            models: vec![
                "Llama3-8B".into(),
                "Mixtral-8x7B-instruct".into(),
                "Codestral-22B".into(),
            ],
            agent1_model: None,
            timeout_secs: 120,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            cassette: "cassettes/llm.jsonl".into(),
        }
    }
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            backend: EmbeddingBackend::Http,
            endpoint: String::new(),
            model: DEFAULT_EMBEDDING_MODEL.into(),
            dimension: DEFAULT_DIMENSION,
            timeout_secs: 60,
            fixture: "cassettes/embeddings.jsonl".into(),
        }
    }
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            rest_base: DEFAULT_REST_BASE.into(),
            graphql_url: DEFAULT_GRAPHQL_URL.into(),
            rate_per_sec: DEFAULT_RATE_PER_SEC,
            timeout_secs: 30,
            cassette: "cassettes/api.jsonl".into(),
        }
    }
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            pool: RetrievalPool::Dev,
            index: "index.bin".into(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cassette,
            seed: 42,
            test_fraction: 0.2,
            split: SplitMethod::Random,
            out_dir: "out".into(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: "data/corpus.jsonl".into(),
            vocabulary: "data/vocabulary.json".into(),
            schema: "data/schema.json".into(),
            templates: None,
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_origins: vec!["http://localhost:5173".into()],
            result_cap: 100,
            redact_questions: false,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(ConfigError::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Parse and resolve relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut config: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        config.resolve_paths(base);
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if self.llm.models.is_empty() {
            return Err("llm.models must list at least one model".into());
        }
        if self.rag.k == 0 {
            return Err("rag.k must be at least 1".into());
        }
        if !(self.run.test_fraction > 0.0 && self.run.test_fraction < 1.0) {
            return Err(format!(
                "run.test_fraction {} must lie in (0, 1)",
                self.run.test_fraction
            ));
        }
        if self.embedding.dimension == 0 {
            return Err("embedding.dimension must be positive".into());
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.llm.cassette);
        fix(&mut self.embedding.fixture);
        fix(&mut self.api.cassette);
        fix(&mut self.rag.index);
        fix(&mut self.run.out_dir);
        fix(&mut self.data.corpus);
        fix(&mut self.data.vocabulary);
        fix(&mut self.data.schema);
        if let Some(t) = &mut self.data.templates {
            fix(t);
        }
    }

    pub fn llm_timeout(&self) -> Duration {
        Duration::from_secs(self.llm.timeout_secs)
    }

    /// Settings safe to expose over HTTP.
    pub fn public_view(&self) -> serde_json::Value {
        serde_json::json!({
            "llm": { "endpoint": self.llm.endpoint, "models": self.llm.models },
            "embedding": { "endpoint": self.embedding.endpoint, "model": self.embedding.model, "backend": self.embedding.backend },
            "api": { "rest_base": self.api.rest_base, "graphql_url": self.api.graphql_url },
            "rag": { "k": self.rag.k, "pool": self.rag.pool },
            "run": { "mode": self.run.mode },
            "service": { "result_cap": self.service.result_cap },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let c = Config::parse(
            r#"
            [llm]
            endpoint = "https://chat.example.org/api"
            models = ["Codestral-22B"]
            [rag]
            k = 3
            [run]
            mode = "live"
            split = "tags"
            "#,
            Path::new("/etc/nl2api"),
        )
        .unwrap();
        assert_eq!(c.llm.models, vec!["Codestral-22B"]);
        assert_eq!(c.rag.k, 3);
        assert_eq!(c.run.mode, Mode::Live);
        assert_eq!(c.run.split, SplitMethod::Tags);
        assert_eq!(c.data.corpus, Path::new("/etc/nl2api/data/corpus.jsonl"));
        assert_eq!(c.api.rest_base, DEFAULT_REST_BASE);
        assert_eq!(c.service.result_cap, 100);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("[rag]\nk = 0", Path::new(".")).is_err());
        assert!(Config::parse("[llm]\nmodels = []", Path::new(".")).is_err());
        assert!(Config::parse("[llm]\nendpont = \"x\"", Path::new(".")).is_err());
        assert!(Config::parse("[run]\nmode = \"dry\"", Path::new(".")).is_err());
    }

    #[test]
    fn public_view_has_no_secrets() {
        let view = Config::default().public_view().to_string();
        assert!(!view.contains("token"));
        assert!(view.contains("\"k\":5"));
    }
}
