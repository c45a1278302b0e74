//! Chat-completion access: live OpenAI-compatible endpoints or recorded cassettes.

mod cassette;
mod extract;
mod live;

use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use cassette::{cassette_key, CassetteBackend, CassetteRecord, RecordingBackend};
pub use extract::{extract_query, NoQueryFound};
pub use live::{LiveBackend, LiveConfig};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const TOKEN_ENV: &str = "NL2API_LLM_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is negative or not finite",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.model.is_empty() {
            return Err(GatewayError::InvalidRequest("empty model id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Live => "live",
            BackendKind::Scripted => "scripted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model: String,
    pub latency_ms: u64,
    pub backend: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("LLM request timed out")]
    Timeout,
    #[error("LLM endpoint rejected the credential")]
    Unauthorized,
    #[error("no cassette entry for prompt hash {0}")]
    CassetteMiss(String),
    #[error("cassette hash {0} collides with a different prompt")]
    CassetteCollision(String),
    #[error("LLM endpoint returned HTTP {status}")]
    UpstreamError { status: u16, body: String },
    #[error("LLM endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("cassette i/o: {0}")]
    Cassette(String),
}

impl GatewayError {
    /// Short machine-readable code used in error bodies and traces.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Timeout => "llm_timeout",
            GatewayError::Unauthorized => "llm_unauthorized",
            GatewayError::CassetteMiss(_) => "llm_cassette_miss",
            GatewayError::CassetteCollision(_) => "llm_cassette_collision",
            GatewayError::UpstreamError { .. } => "llm_upstream_error",
            GatewayError::Unreachable(_) => "llm_unreachable",
            GatewayError::InvalidRequest(_) => "llm_invalid_request",
            GatewayError::Cassette(_) => "llm_cassette_io",
        }
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;

/// Answers from a closure; a pure function of the request. Useful as a test double
/// and for authoring cassettes through [`RecordingBackend`].
pub struct FnBackend {
    respond: Box<Responder>,
    calls: std::sync::atomic::AtomicUsize,
}

impl FnBackend {
    pub fn new(respond: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static) -> Self {
        Self {
            respond: Box::new(respond),
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for FnBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(ChatResponse {
            text: (self.respond)(req)?,
            model: req.model.clone(),
            latency_ms: 0,
            backend: BackendKind::Scripted,
        })
    }
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req).await
    }
}

/// Shared entry point; bounds concurrent upstream calls with a semaphore.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    permits: Arc<Semaphore>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, max_in_flight: usize) -> Self {
        Self {
            backend,
            permits: Arc::new(Semaphore::new(max_in_flight.max(1))),
        }
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| GatewayError::Unreachable("gateway shut down".into()))?;
        self.backend.complete(req).await
    }
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.kind())
            .field("available_permits", &self.permits.available_permits())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    struct Slow {
        active: AtomicUsize,
        peak: AtomicUsize,
    }

    #[async_trait]
    impl ChatBackend for Slow {
        fn kind(&self) -> BackendKind {
            BackendKind::Live
        }

        async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(20)).await;
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok(ChatResponse {
                text: "ok".into(),
                model: req.model.clone(),
                latency_ms: 20,
                backend: BackendKind::Live,
            })
        }
    }

    #[test]
    fn request_validation() {
        let ok = ChatRequest::new("m", vec![ChatMessage::user("hi")]);
        assert!(ok.validate().is_ok());
        assert!(ChatRequest::new("m", vec![]).validate().is_err());
        let assistant_first = ChatRequest::new(
            "m",
            vec![ChatMessage {
                role: Role::Assistant,
                content: "x".into(),
            }],
        );
        assert!(assistant_first.validate().is_err());
        let mut hot = ok.clone();
        hot.temperature = -0.1;
        assert!(hot.validate().is_err());
    }

    #[tokio::test]
    async fn semaphore_bounds_in_flight_calls() {
        let backend = Arc::new(Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gateway = Gateway::new(backend.clone(), 2);
        let req = ChatRequest::new("m", vec![ChatMessage::user("hi")]);
        let calls = (0..8).map(|_| gateway.complete(&req));
        let results = futures::future::join_all(calls).await;
        assert!(results.iter().all(Result::is_ok));
        assert_eq!(backend.peak.load(Ordering::SeqCst), 2);
    }
}
