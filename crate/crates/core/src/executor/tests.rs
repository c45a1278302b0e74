use axum::extract::{Json, RawQuery};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;

use super::*;

const INTRO_URL: &str =
    "https://landmatrix.org/api/deals/?negotiation_status=CONTRACT_CANCELED&area_min=1000&initiation_year_min=2016";

fn record(query: &str, dialect: Dialect, status: u16, body: &str) -> ApiRecord {
    ApiRecord {
        key: cassette_key(query, dialect),
        dialect,
        status,
        body_text: body.into(),
        recorded_at: "2024-05-01T00:00:00Z".into(),
    }
}

#[test]
fn validity_rules() {
    assert!(is_valid(200, "[]", Dialect::Rest));
    assert!(is_valid(204, "{}", Dialect::Graphql));
    assert!(!is_valid(200, "<html>", Dialect::Rest));
    assert!(!is_valid(
        200,
        r#"{"errors":[{"message":"x"}],"data":null}"#,
        Dialect::Graphql
    ));
    assert!(is_valid(200, r#"{"errors":[]}"#, Dialect::Rest));
    assert!(!is_valid(500, "[]", Dialect::Rest));
    assert!(!is_valid(400, "{}", Dialect::Graphql));
}

#[test]
fn id_extraction_shapes() {
    let ids = |v: Value, d| extract_result_ids(&v, d).unwrap().into_iter().collect::<Vec<_>>();
    assert_eq!(ids(json!([{"id": 3}, {"id": 9}]), Dialect::Rest), vec![3, 9]);
    assert_eq!(
        ids(json!({"results": [{"id": 9}, {"id": "3"}, {"id": 9}]}), Dialect::Rest),
        vec![3, 9]
    );
    assert_eq!(ids(json!({"data": {"deals": [{"id": 7}]}}), Dialect::Graphql), vec![7]);
    assert_eq!(
        ids(
            json!({"data": {"deal": {"id": 4, "country": {"id": 450}}}}),
            Dialect::Graphql
        ),
        vec![4]
    );
    assert_eq!(ids(json!([]), Dialect::Rest), Vec::<DealId>::new());
    assert_eq!(
        ids(json!({"data": {"deals": null}}), Dialect::Graphql),
        Vec::<DealId>::new()
    );
    assert!(extract_result_ids(&json!({"count": 3}), Dialect::Rest).is_err());
    assert!(extract_result_ids(&json!([1, 2]), Dialect::Graphql).is_err());
}

#[test]
fn key_ignores_parameter_order_and_origin() {
    let a = cassette_key(INTRO_URL, Dialect::Rest);
    assert_eq!(
        a,
        cassette_key(
            "/api/deals/?area_min=1000&initiation_year_min=2016&negotiation_status=CONTRACT_CANCELED",
            Dialect::Rest
        )
    );
    assert_eq!(
        a,
        "REST /api/deals/?area_min=1000&initiation_year_min=2016&negotiation_status=CONTRACT_CANCELED"
    );
    assert_eq!(cassette_key("not a query {", Dialect::Graphql), "GRAPHQL not a query {");
}

#[test]
fn rest_resolution() {
    let base = "http://127.0.0.1:9/api/";
    let url = |q| resolve_rest(base, q).unwrap().to_string();
    assert_eq!(
        url(INTRO_URL),
        format!("{base}deals/?negotiation_status=CONTRACT_CANCELED&area_min=1000&initiation_year_min=2016")
    );
    assert_eq!(url("/api/deals/?a=1"), format!("{base}deals/?a=1"));
    assert_eq!(url("deals/"), format!("{base}deals/"));
    assert_eq!(url("?limit=5"), format!("{base}deals/?limit=5"));
}

#[tokio::test]
async fn cassette_replay() {
    let exec = Executor::cassette(vec![
        record(INTRO_URL, Dialect::Rest, 200, r#"[{"id": 11}, {"id": 12}]"#),
        record("/api/deals/?bogus=1", Dialect::Rest, 400, r#"{"detail": "bad filter"}"#),
        record(
            "query { deals { id } }",
            Dialect::Graphql,
            200,
            r#"{"errors": [{"message": "x"}], "data": {"deals": [{"id": 1}]}}"#,
        ),
    ]);
    let ok = exec
        .execute(
            "/api/deals/?area_min=1000&negotiation_status=CONTRACT_CANCELED&initiation_year_min=2016",
            Dialect::Rest,
        )
        .await
        .unwrap();
    assert!(ok.valid);
    assert_eq!(ok.source, Source::Cassette);
    assert_eq!(ok.result_ids, BTreeSet::from([11, 12]));
    assert_eq!(ok, exec.execute(INTRO_URL, Dialect::Rest).await.unwrap());

    let bad = exec.execute("/api/deals/?bogus=1", Dialect::Rest).await.unwrap();
    assert!(!bad.valid && bad.result_ids.is_empty());
    assert_eq!(bad.status, Some(400));

    let errors = exec
        .execute("query {\n  deals { id }\n}", Dialect::Graphql)
        .await
        .unwrap();
    assert!(!errors.valid && errors.result_ids.is_empty());
    assert!(errors.payload.is_some());

    assert!(matches!(
        exec.execute("/api/deals/?unknown=1", Dialect::Rest).await,
        Err(ExecError::CassetteMiss(_))
    ));
    let empty = exec.execute("  ", Dialect::Graphql).await.unwrap();
    assert!(!empty.valid && empty.status.is_none());
}

async fn mock_api() -> String {
    let app = Router::new()
        .route(
            "/api/deals/",
            get(|RawQuery(q): RawQuery| async move {
                match q.as_deref() {
                    Some(q) if q.contains("bogus") => (StatusCode::BAD_REQUEST, "{\"detail\":\"bad\"}".to_string()),
                    _ => (
                        StatusCode::OK,
                        json!({"results": [{"id": 5}, {"id": 6}], "query": q}).to_string(),
                    ),
                }
            }),
        )
        .route(
            "/graphql/",
            post(|Json(body): Json<Value>| async move {
                let q = body["query"].as_str().unwrap_or_default().to_string();
                if q.contains("nope") {
                    Json(json!({"errors": [{"message": "Cannot query field nope"}]}))
                } else {
                    Json(json!({"data": {"deals": [{"id": 8}, {"id": 9}]}}))
                }
            }),
        );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn live_config(base: &str) -> ExecutorConfig {
    ExecutorConfig {
        rest_base: format!("{base}/api/"),
        graphql_url: format!("{base}/graphql/"),
        timeout: Duration::from_secs(5),
        rate_per_sec: 100.0,
    }
}

#[tokio::test]
async fn live_calls_and_record_replay_equivalence() {
    let base = mock_api().await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("api.jsonl");
    let recorder = Executor::record(live_config(&base), &path).unwrap();

    let rest = recorder.execute(INTRO_URL, Dialect::Rest).await.unwrap();
    assert!(rest.valid && rest.source == Source::Live);
    assert_eq!(rest.result_ids, BTreeSet::from([5, 6]));
    assert_eq!(
        rest.payload.as_ref().unwrap()["query"],
        "negotiation_status=CONTRACT_CANCELED&area_min=1000&initiation_year_min=2016"
    );
    let gql = recorder
        .execute("query { deals { id } }", Dialect::Graphql)
        .await
        .unwrap();
    assert_eq!(gql.result_ids, BTreeSet::from([8, 9]));
    let gql_err = recorder
        .execute("query { nope { id } }", Dialect::Graphql)
        .await
        .unwrap();
    assert!(!gql_err.valid);
    let rest_err = recorder.execute("/api/deals/?bogus=1", Dialect::Rest).await.unwrap();
    assert!(!rest_err.valid && rest_err.result_ids.is_empty());
    recorder.execute(INTRO_URL, Dialect::Rest).await.unwrap();

    let records = load_api_cassette(&path).unwrap();
    assert_eq!(records.len(), 4);
    let replay = Executor::cassette(records);
    for (q, d, live) in [
        (INTRO_URL, Dialect::Rest, &rest),
        ("query { deals { id } }", Dialect::Graphql, &gql),
        ("query { nope { id } }", Dialect::Graphql, &gql_err),
        ("/api/deals/?bogus=1", Dialect::Rest, &rest_err),
    ] {
        let replayed = replay.execute(q, d).await.unwrap();
        assert_eq!(
            (replayed.valid, &replayed.result_ids),
            (live.valid, &live.result_ids),
            "{q}"
        );
    }
}

#[tokio::test]
async fn transport_failure_is_an_error() {
    let exec = Executor::live(ExecutorConfig {
        rest_base: "http://127.0.0.1:1/api/".into(),
        graphql_url: "http://127.0.0.1:1/graphql/".into(),
        timeout: Duration::from_secs(2),
        rate_per_sec: 100.0,
    });
    assert!(matches!(
        exec.execute("/api/deals/", Dialect::Rest).await,
        Err(ExecError::Transport(_))
    ));
}
