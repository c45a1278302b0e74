//! HTTP front end: `POST /ask`, `GET /health`, `GET /config`.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::executor::{result_records, ExecError, ExecutionResult};
use crate::query::Dialect;
use crate::runtime::Runtime;
use crate::strategies::{generate, EntityBinding, GenerationTrace, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
    pub dialect: String,
    pub strategy: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub digest: String,
    pub strategy: Strategy,
    pub model: String,
    pub dialect: Dialect,
    pub raw_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bindings: Option<Vec<EntityBinding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_examples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl From<&GenerationTrace> for TraceSummary {
    fn from(t: &GenerationTrace) -> Self {
        Self {
            digest: t.digest(),
            strategy: t.strategy,
            model: t.model.clone(),
            dialect: t.dialect,
            raw_output: t.raw_outputs.last().cloned(),
            bindings: t.bindings.clone(),
            retrieved_examples: t.retrieved_examples.clone(),
            warnings: t.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub query: Option<String>,
    pub valid: bool,
    pub results: Vec<Value>,
    pub total_results: usize,
    pub truncated: bool,
    pub trace: TraceSummary,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self(
            StatusCode::BAD_REQUEST,
            ErrorBody {
                error: code.into(),
                message: message.into(),
            },
        )
    }

    fn upstream(code: &str, message: impl Into<String>) -> Self {
        Self(
            StatusCode::BAD_GATEWAY,
            ErrorBody {
                error: code.into(),
                message: message.into(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
struct AskParams {
    #[serde(default)]
    full: bool,
}

/// Shared handle; [`Service::reload`] swaps the runtime for subsequent requests.
#[derive(Clone)]
pub struct Service {
    runtime: Arc<RwLock<Arc<Runtime>>>,
}

impl Service {
    pub fn new(runtime: Runtime) -> Self {
        Self {
            runtime: Arc::new(RwLock::new(Arc::new(runtime))),
        }
    }

    pub fn current(&self) -> Arc<Runtime> {
        self.runtime.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn reload(&self, runtime: Runtime) {
        *self.runtime.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(runtime);
    }

    /// Router with CORS for the configured origins (`*` allows any).
    pub fn router(&self) -> Router {
        let origins = self.current().config.service.cors_origins.clone();
        let allow = if origins.iter().any(|o| o == "*") {
            AllowOrigin::from(Any)
        } else {
            AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
        };
        let cors = CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([axum::http::header::CONTENT_TYPE]);
        Router::new()
            .route("/ask", post(ask))
            .route("/health", get(health))
            .route("/config", get(config))
            .layer(cors)
            .with_state(self.clone())
    }
}

fn health_body(rt: &Runtime) -> Value {
    serde_json::json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "models": rt.config.llm.models,
        "strategies": Strategy::ALL.map(Strategy::as_str),
        "dialects": Dialect::ALL.map(Dialect::as_str),
        "llm_backend": rt.deps.gateway.kind(),
        "api_mode": rt.executor.mode(),
        "retrieval_available": rt.deps.retriever.is_some(),
    })
}

async fn health(State(svc): State<Service>) -> Json<Value> {
    Json(health_body(&svc.current()))
}

async fn config(State(svc): State<Service>) -> Json<Value> {
    Json(svc.current().config.public_view())
}

async fn ask(
    State(svc): State<Service>,
    Query(params): Query<AskParams>,
    body: Bytes,
) -> Result<Json<AskResponse>, ApiError> {
    let rt = svc.current();
    let req: AskRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
    let question = req.question.trim();
    if question.is_empty() {
        return Err(ApiError::bad_request("empty_question", "question must not be empty"));
    }
    let dialect: Dialect = req.dialect.parse().map_err(|_| {
        ApiError::bad_request(
            "unknown_dialect",
            format!("unknown dialect {:?} (valid: REST, GRAPHQL)", req.dialect),
        )
    })?;
    let strategy: Strategy = req
        .strategy
        .parse()
        .map_err(|e: crate::strategies::UnknownStrategy| ApiError::bad_request("unknown_strategy", e.to_string()))?;
    if !rt.config.llm.models.contains(&req.model) {
        return Err(ApiError::bad_request(
            "unknown_model",
            format!(
                "model {:?} is not configured (valid: {})",
                req.model,
                rt.config.llm.models.join(", ")
            ),
        ));
    }
    let shown: &str = if rt.config.service.redact_questions {
        "<redacted>"
    } else {
        question
    };
    tracing::info!(question = shown, %strategy, model = %req.model, %dialect, "ask");

    let trace = generate(question, strategy, dialect, &req.model, &rt.deps).await;
    let summary = TraceSummary::from(&trace);
    let Some(query) = trace.extracted_query.clone() else {
        let err = trace.error.clone().unwrap_or_else(unreachable_error);
        if err.code == "no_query_found" {
            return Ok(Json(AskResponse {
                query: None,
                valid: false,
                results: vec![],
                total_results: 0,
                truncated: false,
                trace: summary,
                error: Some(err.message),
            }));
        }
        return Err(ApiError::upstream(&err.code, err.message));
    };

    let result = rt.executor.execute(&query, dialect).await.map_err(|e| {
        let code = match e {
            ExecError::Transport(_) => "api_transport",
            ExecError::CassetteMiss(_) => "api_cassette_miss",
            ExecError::Cassette(_) => "api_cassette_io",
        };
        ApiError::upstream(code, e.to_string())
    })?;
    let cap = if params.full {
        usize::MAX
    } else {
        rt.config.service.result_cap
    };
    Ok(Json(respond(query, result, dialect, cap, summary)))
}

fn unreachable_error() -> crate::strategies::TraceError {
    crate::strategies::TraceError {
        code: "generation_failed".into(),
        message: "generation produced no query".into(),
        unscored: false,
    }
}

fn respond(query: String, r: ExecutionResult, dialect: Dialect, cap: usize, trace: TraceSummary) -> AskResponse {
    if !r.valid {
        return AskResponse {
            query: Some(query),
            valid: false,
            results: vec![],
            total_results: 0,
            truncated: false,
            trace,
            error: Some(rejection(&r)),
        };
    }
    let records: Vec<Value> = r
        .payload
        .as_ref()
        .and_then(|p| result_records(p, dialect).ok())
        .unwrap_or_default()
        .into_iter()
        .cloned()
        .collect();
    let total = records.len();
    AskResponse {
        query: Some(query),
        valid: true,
        results: records.into_iter().take(cap).collect(),
        total_results: total,
        truncated: total > cap,
        trace,
        error: None,
    }
}

fn rejection(r: &ExecutionResult) -> String {
    match (r.status, &r.payload) {
        (None, _) => "empty query".into(),
        (Some(s), _) if !(200..300).contains(&s) => format!("API rejected the query (HTTP {s})"),
        (_, Some(p)) => match p.get("errors") {
            Some(Value::Array(errs)) if !errs.is_empty() => {
                let msg = errs[0]
                    .get("message")
                    .and_then(Value::as_str)
                    .unwrap_or("unknown error");
                format!("GraphQL error: {msg}")
            }
            _ => "API reported errors".into(),
        },
        (_, None) => "API response is not JSON".into(),
    }
}
