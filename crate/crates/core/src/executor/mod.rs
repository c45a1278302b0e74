//! Run generated queries against the deals API or a recorded cassette.

mod limiter;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;
use url::{Position, Url};

pub use limiter::RateLimiter;

use crate::query::{parse, Dialect};

pub type DealId = i64;

pub const DEFAULT_REST_BASE: &str = "https://landmatrix.org/api/";
pub const DEFAULT_GRAPHQL_URL: &str = "https://landmatrix.org/graphql/";
pub const DEFAULT_RATE_PER_SEC: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Cassette,
    Record,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Live => "live",
            Mode::Cassette => "cassette",
            Mode::Record => "record",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "cassette" => Ok(Mode::Cassette),
            "record" => Ok(Mode::Record),
            other => Err(format!("unknown mode {other:?} (valid: live, cassette, record)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Live,
    Cassette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    /// HTTP status; absent when no call was made.
    pub status: Option<u16>,
    pub payload: Option<Value>,
    pub valid: bool,
    pub result_ids: BTreeSet<DealId>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExecutionResult {
    /// Classify a raw response. Ids are only collected from valid responses.
    pub fn from_response(status: u16, body: &str, dialect: Dialect, source: Source) -> Self {
        let payload: Option<Value> = serde_json::from_str(body).ok();
        let valid = is_valid(status, body, dialect);
        let mut warnings = Vec::new();
        let result_ids = match (&payload, valid) {
            (Some(p), true) => extract_result_ids(p, dialect).unwrap_or_else(|e| {
                warnings.push(e.to_string());
                BTreeSet::new()
            }),
            _ => BTreeSet::new(),
        };
        Self {
            status: Some(status),
            payload,
            valid,
            result_ids,
            source,
            warnings,
        }
    }

    fn not_sent(source: Source) -> Self {
        Self {
            status: None,
            payload: None,
            valid: false,
            result_ids: BTreeSet::new(),
            source,
            warnings: vec!["empty query, not sent".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no API cassette entry for {0}")]
    CassetteMiss(String),
    #[error("API cassette i/o: {0}")]
    Cassette(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized payload shape ({0})")]
pub struct ShapeUnrecognized(pub String);

/// 2xx, a JSON body, and for GraphQL no top-level `errors` member.
pub fn is_valid(status: u16, body: &str, dialect: Dialect) -> bool {
    if !(200..300).contains(&status) {
        return false;
    }
    match serde_json::from_str::<Value>(body) {
        Ok(payload) => match dialect {
            Dialect::Rest => true,
            Dialect::Graphql => payload.get("errors").is_none(),
        },
        Err(_) => false,
    }
}

/// The deal records of a payload: REST top-level array or `results`;
/// GraphQL arrays (or single objects) under each member of `data`.
pub fn result_records(payload: &Value, dialect: Dialect) -> Result<Vec<&Value>, ShapeUnrecognized> {
    match dialect {
        Dialect::Rest => match payload {
            Value::Array(items) => Ok(items.iter().collect()),
            Value::Object(map) => match map.get("results") {
                Some(Value::Array(items)) => Ok(items.iter().collect()),
                _ => Err(shape(payload)),
            },
            _ => Err(shape(payload)),
        },
        Dialect::Graphql => match payload.get("data") {
            Some(Value::Object(fields)) => Ok(fields
                .values()
                .flat_map(|v| match v {
                    Value::Array(items) => items.iter().collect(),
                    Value::Object(_) => vec![v],
                    _ => vec![],
                })
                .collect()),
            _ => Err(shape(payload)),
        },
    }
}

fn shape(payload: &Value) -> ShapeUnrecognized {
    let kind = match payload {
        Value::Null => "null".to_string(),
        Value::Bool(_) => "boolean".to_string(),
        Value::Number(_) => "number".to_string(),
        Value::String(_) => "string".to_string(),
        Value::Array(a) => format!("array of {}", a.len()),
        Value::Object(m) => format!("object with keys {:?}", m.keys().collect::<Vec<_>>()),
    };
    ShapeUnrecognized(kind)
}

/// Each record's own integer `id` (numeric strings accepted); duplicates collapse.
pub fn extract_result_ids(payload: &Value, dialect: Dialect) -> Result<BTreeSet<DealId>, ShapeUnrecognized> {
    Ok(result_records(payload, dialect)?
        .into_iter()
        .filter_map(|r| match r.get("id")? {
            Value::Number(n) => n.as_i64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        })
        .collect())
}

/// Dialect plus the canonical serialization when the query parses, else the trimmed text.
pub fn cassette_key(query: &str, dialect: Dialect) -> String {
    let body = parse(dialect, query).map_or_else(|_| query.trim().to_string(), |q| q.serialize());
    format!("{} {body}", dialect.as_str())
}

/// One recorded API interaction: a line of the API cassette file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiRecord {
    pub key: String,
    pub dialect: Dialect,
    pub status: u16,
    pub body_text: String,
    pub recorded_at: String,
}

pub fn load_api_cassette(path: impl AsRef<Path>) -> Result<Vec<ApiRecord>, ExecError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ExecError::Cassette(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ExecError::Cassette(format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub rest_base: String,
    pub graphql_url: String,
    pub timeout: Duration,
    pub rate_per_sec: f64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            rest_base: DEFAULT_REST_BASE.into(),
            graphql_url: DEFAULT_GRAPHQL_URL.into(),
            timeout: Duration::from_secs(30),
            rate_per_sec: DEFAULT_RATE_PER_SEC,
        }
    }
}

struct Recorder {
    path: PathBuf,
    seen: Mutex<HashSet<String>>,
}

/// Query runner; cheap to clone, clones share the rate limiter and cassette.
#[derive(Clone)]
pub struct Executor {
    mode: Mode,
    config: ExecutorConfig,
    client: reqwest::Client,
    limiter: Arc<RateLimiter>,
    replay: Arc<HashMap<String, ApiRecord>>,
    recorder: Option<Arc<Recorder>>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("mode", &self.mode)
            .field("rest_base", &self.config.rest_base)
            .field("graphql_url", &self.config.graphql_url)
            .field("cassette_entries", &self.replay.len())
            .finish()
    }
}

impl Executor {
    pub fn live(config: ExecutorConfig) -> Self {
        Self::build(Mode::Live, config, Vec::new(), None)
    }

    /// Replay-only executor; never touches the network.
    pub fn cassette(records: Vec<ApiRecord>) -> Self {
        Self::build(Mode::Cassette, ExecutorConfig::default(), records, None)
    }

    pub fn cassette_file(path: impl AsRef<Path>) -> Result<Self, ExecError> {
        Ok(Self::cassette(load_api_cassette(path)?))
    }

    /// Live calls, each new key appended to the cassette at `path`.
    pub fn record(config: ExecutorConfig, path: impl Into<PathBuf>) -> Result<Self, ExecError> {
        let path = path.into();
        let existing = if path.exists() {
            load_api_cassette(&path)?
        } else {
            Vec::new()
        };
        let recorder = Recorder {
            path,
            seen: Mutex::new(existing.into_iter().map(|r| r.key).collect()),
        };
        Ok(Self::build(Mode::Record, config, Vec::new(), Some(recorder)))
    }

    fn build(mode: Mode, config: ExecutorConfig, records: Vec<ApiRecord>, recorder: Option<Recorder>) -> Self {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .unwrap_or_default();
        Self {
            mode,
            limiter: Arc::new(RateLimiter::new(config.rate_per_sec, 1)),
            config,
            client,
            replay: Arc::new(records.into_iter().map(|r| (r.key.clone(), r)).collect()),
            recorder: recorder.map(Arc::new),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    /// Empty queries are invalid without a call; cassette misses and transport
    /// failures are errors, not invalid results.
    pub async fn execute(&self, query: &str, dialect: Dialect) -> Result<ExecutionResult, ExecError> {
        let source = match self.mode {
            Mode::Cassette => Source::Cassette,
            _ => Source::Live,
        };
        if query.trim().is_empty() {
            return Ok(ExecutionResult::not_sent(source));
        }
        let key = cassette_key(query, dialect);
        if self.mode == Mode::Cassette {
            let record = self.replay.get(&key).ok_or(ExecError::CassetteMiss(key))?;
            return Ok(ExecutionResult::from_response(
                record.status,
                &record.body_text,
                dialect,
                Source::Cassette,
            ));
        }
        let (status, body) = self.call(query, dialect).await?;
        if let Some(recorder) = &self.recorder {
            append_record(
                recorder,
                ApiRecord {
                    key,
                    dialect,
                    status,
                    body_text: body.clone(),
                    recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                },
            )
            .await?;
        }
        Ok(ExecutionResult::from_response(status, &body, dialect, Source::Live))
    }

    /// Target URL of a REST query: the path after `/api/` joined to the configured base.
    pub fn rest_url(&self, query: &str) -> Result<Url, ExecError> {
        resolve_rest(&self.config.rest_base, query)
    }

    async fn call(&self, query: &str, dialect: Dialect) -> Result<(u16, String), ExecError> {
        let request = match dialect {
            Dialect::Rest => self.client.get(self.rest_url(query)?),
            Dialect::Graphql => self
                .client
                .post(&self.config.graphql_url)
                .json(&serde_json::json!({ "query": query.trim() })),
        };
        self.limiter.acquire().await;
        let response = request
            .header(reqwest::header::ACCEPT, "application/json")
            .send()
            .await
            .map_err(|e| ExecError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().await.map_err(|e| ExecError::Transport(e.to_string()))?;
        Ok((status, body))
    }
}

fn resolve_rest(base: &str, query: &str) -> Result<Url, ExecError> {
    let base = Url::parse(base).map_err(|e| ExecError::Transport(format!("bad REST base {base:?}: {e}")))?;
    let q = query.trim();
    let target = match Url::parse(q) {
        Ok(abs) => abs[Position::BeforePath..].to_string(),
        Err(_) => q.to_string(),
    };
    let relative = target
        .strip_prefix("/api/")
        .or_else(|| target.strip_prefix("api/"))
        .unwrap_or_else(|| target.trim_start_matches('/'));
    let relative = if relative.starts_with('?') {
        format!("deals/{relative}")
    } else {
        relative.to_string()
    };
    base.join(&relative)
        .map_err(|e| ExecError::Transport(format!("cannot resolve {q:?}: {e}")))
}

async fn append_record(recorder: &Recorder, record: ApiRecord) -> Result<(), ExecError> {
    let mut seen = recorder.seen.lock().await;
    if !seen.insert(record.key.clone()) {
        return Ok(());
    }
    let io = |e: std::io::Error| ExecError::Cassette(format!("{}: {e}", recorder.path.display()));
    let mut line = serde_json::to_string(&record).map_err(|e| ExecError::Cassette(e.to_string()))?;
    line.push('\n');
    let mut file = tokio::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&recorder.path)
        .await
        .map_err(io)?;
    file.write_all(line.as_bytes()).await.map_err(io)?;
    file.flush().await.map_err(io)
}

#[cfg(test)]
mod tests;
