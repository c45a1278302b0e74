use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use nl2api_core::config::Config;
use nl2api_core::executor::Mode;
use nl2api_core::llm::{ChatBackend, FnBackend, GatewayError};
use nl2api_core::runtime::Runtime;
use nl2api_core::service::{AskResponse, ErrorBody, Service};
use serde_json::{json, Value};
use tower::ServiceExt;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn demo_config() -> Config {
    Config::load(root().join("nl2api.toml")).unwrap()
}

async fn cassette_runtime(config: Config) -> Runtime {
    Runtime::build_with_token(config, Mode::Cassette, None).await.unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn ask(body: Value, query: &str) -> Request<Body> {
    Request::builder()
        .method(Method::POST)
        .uri(format!("/ask{query}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(path: &str) -> Request<Body> {
    Request::builder().uri(path).body(Body::empty()).unwrap()
}

async fn first_test_question(rt: &Runtime) -> (String, String) {
    let e = rt.test.iter().find(|e| e.rest_query.is_some()).unwrap();
    (e.question.clone(), e.rest_query.clone().unwrap())
}

#[tokio::test]
async fn health_lists_strategies_and_scripted_backend() {
    let svc = Service::new(cassette_runtime(demo_config()).await);
    let (status, body) = call(&svc.router(), get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["strategies"], json!(["prompt_engineering", "rag", "agentic"]));
    assert_eq!(body["llm_backend"], "scripted");
    assert_eq!(body["api_mode"], "cassette");
    assert_eq!(body["models"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn known_question_replays_cassette_query_and_results() {
    let rt = cassette_runtime(demo_config()).await;
    let (question, gold) = first_test_question(&rt).await;
    let app = Service::new(rt).router();
    let req =
        json!({"question": question, "dialect": "REST", "strategy": "prompt_engineering", "model": "Codestral-22B"});
    let (status, body) = call(&app, ask(req.clone(), "")).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: AskResponse = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(resp.query.as_deref(), Some(gold.as_str()));
    assert!(resp.valid);
    assert!(resp.error.is_none());
    assert_eq!(resp.trace.digest.len(), 16);

    // Stateless: an identical request yields an identical body.
    let (_, again) = call(&app, ask(req, "")).await;
    assert_eq!(again, body);
}

#[tokio::test]
async fn result_cap_and_full_flag() {
    let mut config = demo_config();
    config.service.result_cap = 1;
    let rt = cassette_runtime(config).await;
    let (question, _) = first_test_question(&rt).await;
    let app = Service::new(rt).router();
    let req =
        json!({"question": question, "dialect": "REST", "strategy": "prompt_engineering", "model": "Codestral-22B"});
    let (_, capped) = call(&app, ask(req.clone(), "")).await;
    let capped: AskResponse = serde_json::from_value(capped).unwrap();
    assert!(capped.total_results > 1, "fixture needs more than one result");
    assert_eq!(capped.results.len(), 1);
    assert!(capped.truncated);
    let (_, full) = call(&app, ask(req, "?full=true")).await;
    let full: AskResponse = serde_json::from_value(full).unwrap();
    assert_eq!(full.results.len(), full.total_results);
    assert!(!full.truncated);
}

#[tokio::test]
async fn invalid_query_has_no_results_and_an_error() {
    let rt = cassette_runtime(demo_config()).await;
    // Llama3-8B is scripted to add an unknown filter on every third entry.
    let entry = rt
        .test
        .iter()
        .find(|e| e.id.rsplit('-').next().unwrap().parse::<u32>().unwrap() % 3 == 0)
        .cloned()
        .unwrap();
    let app = Service::new(rt).router();
    let req =
        json!({"question": entry.question, "dialect": "REST", "strategy": "prompt_engineering", "model": "Llama3-8B"});
    let (status, body) = call(&app, ask(req, "")).await;
    assert_eq!(status, StatusCode::OK);
    let resp: AskResponse = serde_json::from_value(body).unwrap();
    assert!(!resp.valid);
    assert!(resp.results.is_empty());
    assert!(resp.error.unwrap().contains("HTTP 400"));
}

#[tokio::test]
async fn request_validation_is_400() {
    let app = Service::new(cassette_runtime(demo_config()).await).router();
    let cases = [
        (
            json!({"question": "  ", "dialect": "REST", "strategy": "rag", "model": "Codestral-22B"}),
            "empty_question",
        ),
        (
            json!({"question": "q", "dialect": "SQL", "strategy": "rag", "model": "Codestral-22B"}),
            "unknown_dialect",
        ),
        (
            json!({"question": "q", "dialect": "REST", "strategy": "fewshot", "model": "Codestral-22B"}),
            "unknown_strategy",
        ),
        (
            json!({"question": "q", "dialect": "REST", "strategy": "rag", "model": "gpt-x"}),
            "unknown_model",
        ),
        (json!({"question": "q"}), "invalid_request"),
    ];
    for (body, code) in cases {
        let (status, resp) = call(&app, ask(body, "")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let err: ErrorBody = serde_json::from_value(resp).unwrap();
        assert_eq!(err.error, code);
    }
    let (status, _) = call(&app, ask(json!("not an object"), "")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, resp) = call(
        &app,
        ask(
            json!({"question": "q", "dialect": "REST", "strategy": "fewshot", "model": "Codestral-22B"}),
            "",
        ),
    )
    .await;
    assert!(resp["message"]
        .as_str()
        .unwrap()
        .contains("prompt_engineering, rag, agentic"));
}

async fn scripted_runtime(answer: impl Fn() -> Result<String, GatewayError> + Send + Sync + 'static) -> Runtime {
    let config = demo_config();
    let backend: Arc<dyn ChatBackend> = Arc::new(FnBackend::new(move |_| answer()));
    let executor = nl2api_core::runtime::executor(&config, Mode::Cassette).unwrap();
    Runtime::assemble(config, Mode::Cassette, backend, executor)
        .await
        .unwrap()
}

#[tokio::test]
async fn gateway_timeout_is_502() {
    let app = Service::new(scripted_runtime(|| Err(GatewayError::Timeout)).await).router();
    let req = json!({"question": "deals in Ghana", "dialect": "REST", "strategy": "prompt_engineering", "model": "Llama3-8B"});
    let (status, body) = call(&app, ask(req, "")).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "llm_timeout");
}

#[tokio::test]
async fn api_cassette_miss_is_502_and_refusal_is_200() {
    let app = Service::new(scripted_runtime(|| Ok("/api/deals/?country_id=999999".into())).await).router();
    let req = json!({"question": "deals", "dialect": "REST", "strategy": "prompt_engineering", "model": "Llama3-8B"});
    let (status, body) = call(&app, ask(req.clone(), "")).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "api_cassette_miss");

    let app = Service::new(scripted_runtime(|| Ok("Sorry, I cannot answer.".into())).await).router();
    let (status, body) = call(&app, ask(req, "")).await;
    assert_eq!(status, StatusCode::OK);
    let resp: AskResponse = serde_json::from_value(body).unwrap();
    assert!(!resp.valid && resp.query.is_none());
    assert_eq!(resp.error.as_deref(), Some("model produced no query"));
}

#[tokio::test]
async fn reload_changes_health() {
    let svc = Service::new(cassette_runtime(demo_config()).await);
    let app = svc.router();
    let mut config = demo_config();
    config.llm.models = vec!["Codestral-22B".into()];
    svc.reload(cassette_runtime(config).await);
    let (_, body) = call(&app, get("/health")).await;
    assert_eq!(body["models"], json!(["Codestral-22B"]));
}

#[tokio::test]
async fn config_view_and_cors() {
    let app = Service::new(cassette_runtime(demo_config()).await).router();
    let (status, body) = call(&app, get("/config")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rag"]["k"], 5);
    assert!(!body.to_string().to_lowercase().contains("token"));

    let preflight = Request::builder()
        .method(Method::OPTIONS)
        .uri("/ask")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(preflight).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
}
