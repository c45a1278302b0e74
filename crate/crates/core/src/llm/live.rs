use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendKind, ChatBackend, ChatMessage, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

/// OpenAI-compatible `chat/completions` client. Retries once on timeouts,
/// connection failures, HTTP 429 and 5xx.
pub struct LiveBackend {
    client: reqwest::Client,
    url: String,
    token: Option<String>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(Result<String, GatewayError>),
    Transient(GatewayError),
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Self {
            client: reqwest::Client::builder()
                .timeout(config.timeout)
                .build()
                .unwrap_or_default(),
            url,
            token: config.token,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    async fn attempt(&self, req: &ChatRequest) -> Attempt {
        let mut builder = self.client.post(&self.url).json(&WireRequest {
            model: &req.model,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            stream: false,
        });
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = match builder.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Transient(GatewayError::Timeout),
            Err(e) if e.is_connect() => return Attempt::Transient(GatewayError::Unreachable(e.to_string())),
            Err(e) => return Attempt::Done(Err(GatewayError::Unreachable(e.to_string()))),
        };
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Attempt::Done(Err(GatewayError::Unauthorized));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            let err = GatewayError::UpstreamError {
                status: status.as_u16(),
                body,
            };
            return if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
                Attempt::Transient(err)
            } else {
                Attempt::Done(Err(err))
            };
        }
        let body = match response.bytes().await {
            Ok(b) => b,
            Err(e) if e.is_timeout() => return Attempt::Transient(GatewayError::Timeout),
            Err(e) => return Attempt::Done(Err(GatewayError::Unreachable(e.to_string()))),
        };
        let parsed: Result<WireResponse, _> = serde_json::from_slice(&body);
        Attempt::Done(match parsed {
            Ok(wire) => Ok(wire
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .unwrap_or_default()),
            Err(e) => Err(GatewayError::UpstreamError {
                status: status.as_u16(),
                body: format!("unparseable completion body: {e}"),
            }),
        })
    }
}

#[async_trait]
impl ChatBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let text = match self.attempt(req).await {
            Attempt::Done(result) => result?,
            Attempt::Transient(first) => {
                tracing::warn!(error = %first, "transient LLM failure, retrying once");
                match self.attempt(req).await {
                    Attempt::Done(result) => result?,
                    Attempt::Transient(second) => return Err(second),
                }
            }
        };
        Ok(ChatResponse {
            text,
            model: req.model.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            backend: BackendKind::Live,
        })
    }
}
