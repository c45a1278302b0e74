use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;

use super::{BackendKind, ChatBackend, ChatMessage, ChatRequest, ChatResponse, GatewayError};

/// One recorded completion: a line of the LLM cassette file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub key_hash: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f64,
    pub response_text: String,
}

impl CassetteRecord {
    pub fn new(req: &ChatRequest, response_text: impl Into<String>) -> Self {
        Self {
            key_hash: cassette_key(req),
            model: req.model.clone(),
            messages: req.messages.clone(),
            temperature: req.temperature,
            response_text: response_text.into(),
        }
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        self.model == req.model && self.messages == req.messages && self.temperature == req.temperature
    }
}

/// 64-bit hex key over the canonical JSON of `(model, messages, temperature)`.
pub fn cassette_key(req: &ChatRequest) -> String {
    let canonical = serde_json::json!({
        "messages": req.messages,
        "model": req.model,
        "temperature": req.temperature,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Replays completions from a cassette; never touches the network.
#[derive(Debug, Default)]
pub struct CassetteBackend {
    records: HashMap<String, CassetteRecord>,
}

impl CassetteBackend {
    pub fn new(records: impl IntoIterator<Item = CassetteRecord>) -> Self {
        Self {
            records: records.into_iter().map(|r| (r.key_hash.clone(), r)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<CassetteRecord>(l)
                    .map_err(|e| GatewayError::Cassette(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[async_trait]
impl ChatBackend for CassetteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = cassette_key(req);
        let record = self
            .records
            .get(&key)
            .ok_or_else(|| GatewayError::CassetteMiss(key.clone()))?;
        if !record.matches(req) {
            return Err(GatewayError::CassetteCollision(key));
        }
        Ok(ChatResponse {
            text: record.response_text.clone(),
            model: req.model.clone(),
            latency_ms: 0,
            backend: BackendKind::Scripted,
        })
    }
}

/// Forwards to an inner backend and appends each new completion to a cassette file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    seen: Mutex<HashSet<String>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Keys already present in `path` are not appended again.
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let seen = if path.exists() {
            CassetteBackend::load(&path)?.records.into_keys().collect()
        } else {
            HashSet::new()
        };
        Ok(Self {
            inner,
            path,
            seen: Mutex::new(seen),
        })
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.complete(req).await?;
        let record = CassetteRecord::new(req, response.text.clone());
        let mut seen = self.seen.lock().await;
        if seen.insert(record.key_hash.clone()) {
            let mut line = serde_json::to_string(&record).map_err(|e| GatewayError::Cassette(e.to_string()))?;
            line.push('\n');
            let mut file = tokio::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .await
                .map_err(|e| GatewayError::Cassette(format!("{}: {e}", self.path.display())))?;
            file.write_all(line.as_bytes())
                .await
                .map_err(|e| GatewayError::Cassette(e.to_string()))?;
            file.flush().await.map_err(|e| GatewayError::Cassette(e.to_string()))?;
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(
            "Codestral-22B",
            vec![
                ChatMessage::system("act as a GraphQL specialist"),
                ChatMessage::user(text),
            ],
        )
    }

    #[test]
    fn key_is_stable_and_sensitive() {
        let a = cassette_key(&request("deals in Ghana"));
        assert_eq!(a.len(), 16);
        assert_eq!(a, cassette_key(&request("deals in Ghana")));
        assert_ne!(a, cassette_key(&request("deals in Mali")));
        let mut warm = request("deals in Ghana");
        warm.temperature = 0.7;
        assert_ne!(a, cassette_key(&warm));
        let mut other_model = request("deals in Ghana");
        other_model.model = "Llama3-8B".into();
        assert_ne!(a, cassette_key(&other_model));
    }

    #[tokio::test]
    async fn replay_hit_and_miss() {
        let req = request("h1");
        let backend = CassetteBackend::new([CassetteRecord::new(&req, "query { deals(limit: 5) { id } }")]);
        let resp = backend.complete(&req).await.unwrap();
        assert_eq!(resp.text, "query { deals(limit: 5) { id } }");
        assert_eq!(resp.backend, BackendKind::Scripted);
        assert_eq!(backend.complete(&req).await.unwrap(), resp);
        assert!(matches!(
            backend.complete(&request("unknown")).await,
            Err(GatewayError::CassetteMiss(_))
        ));
    }

    #[tokio::test]
    async fn collision_is_detected() {
        let req = request("h1");
        let mut record = CassetteRecord::new(&req, "x");
        record.messages[1].content = "something else".into();
        let backend = CassetteBackend::new([record]);
        assert!(matches!(
            backend.complete(&req).await,
            Err(GatewayError::CassetteCollision(_))
        ));
    }

    #[tokio::test]
    async fn recording_dedupes_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("llm.jsonl");
        let req = request("q");
        let inner = CassetteBackend::new([CassetteRecord::new(&req, "answer")]);
        let recorder = RecordingBackend::new(inner, &path).unwrap();
        recorder.complete(&req).await.unwrap();
        recorder.complete(&req).await.unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let replay = CassetteBackend::load(&path).unwrap();
        assert_eq!(replay.complete(&req).await.unwrap().text, "answer");
    }
}
