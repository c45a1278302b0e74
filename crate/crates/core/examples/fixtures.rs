//! Regenerate the scripted cassettes shipped with the repository.
//!
//! ```text
//! cargo run -p nl2api-core --example fixtures -- demo nl2api.toml
//! cargo run -p nl2api-core --example fixtures -- replay crates/cli/tests/fixtures/replay
//! ```
//!
//! `demo` answers every prompt of the evaluation cross-product with a scripted
//! model derived from the expert queries and serves API calls from a synthetic
//! deal table. `replay` turns a hand-written `responses.json` (entry id to raw
//! completion) and `api_responses.json` into cassette files.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nl2api_core::config::Config;
use nl2api_core::corpus::{load_vocabulary, AttributeVocabulary, Corpus};
use nl2api_core::executor::{cassette_key, ApiRecord, Executor, Mode};
use nl2api_core::llm::{ChatBackend, ChatRequest, FnBackend, GatewayError, RecordingBackend};
use nl2api_core::query::{parse, CanonicalQuery, Dialect};
use nl2api_core::runtime::{load_corpus_checked, Runtime};
use nl2api_core::strategies::{generate, Strategy};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

type BoxError = Box<dyn std::error::Error>;

const RECORDED_AT: &str = "2026-01-01T00:00:00Z";

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), BoxError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.as_slice() {
        [cmd, path] if cmd == "demo" => demo(Path::new(path)).await,
        [cmd, dir] if cmd == "replay" => replay(Path::new(dir)).await,
        _ => Err("usage: fixtures demo <config> | fixtures replay <dir>".into()),
    }
}

fn question_of(req: &ChatRequest) -> String {
    let user = req.messages.last().map(|m| m.content.as_str()).unwrap_or_default();
    user.split("\n\n").next().unwrap_or_default().trim().to_string()
}

fn dialect_of(req: &ChatRequest) -> Dialect {
    let system = req.messages.first().map(|m| m.content.as_str()).unwrap_or_default();
    if system.contains("GraphQL") {
        Dialect::Graphql
    } else {
        Dialect::Rest
    }
}

fn is_agent_one(req: &ChatRequest) -> bool {
    req.messages
        .first()
        .is_some_and(|m| m.content.contains("[entity: value]"))
}

fn entry_number(id: &str) -> u32 {
    id.rsplit('-').next().and_then(|n| n.parse().ok()).unwrap_or(0)
}

/// Scripted model: the expert query, with model-specific mistakes.
fn scripted_answer(corpus: &Corpus, req: &ChatRequest) -> Result<String, GatewayError> {
    let question = question_of(req);
    let entry = corpus
        .iter()
        .find(|e| e.question == question)
        .ok_or_else(|| GatewayError::CassetteMiss(question.clone()))?;
    let dialect = dialect_of(req);
    if is_agent_one(req) {
        let rest = entry.rest_query.as_deref().unwrap_or_default();
        let q = parse(Dialect::Rest, rest).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let pairs: Vec<String> = q
            .filters
            .iter()
            .flat_map(|f| f.values.iter().map(move |v| format!("[{}: {}]", f.attribute, v.raw)))
            .collect();
        return Ok(pairs.join("\n"));
    }
    let gold = entry.query(dialect).unwrap_or_default().to_string();
    let n = entry_number(&entry.id);
    let answer = match (req.model.as_str(), dialect) {
        ("Llama3-8B", Dialect::Rest) if n.is_multiple_of(3) => format!("{gold}&deal_status=ACTIVE"),
        ("Llama3-8B", Dialect::Graphql) if n.is_multiple_of(4) => {
            return Ok("I could not find a matching GraphQL field for this question.".into())
        }
        ("Mixtral-8x7B-instruct", Dialect::Rest) if n.is_multiple_of(5) => format!("{gold}&area_max=100000"),
        _ => gold,
    };
    let lang = match dialect {
        Dialect::Rest => "",
        Dialect::Graphql => "graphql",
    };
    Ok(format!("Here is the request:\n\n```{lang}\n{answer}\n```"))
}

struct Deal {
    id: i64,
    country: (i64, &'static str),
    size: f64,
    year: i64,
    negotiation: &'static str,
    implementation: &'static str,
    nature: &'static str,
    intention: &'static str,
}

fn synthetic_deals() -> Vec<Deal> {
    const COUNTRIES: [(i64, &str); 12] = [
        (104, "Myanmar"),
        (288, "Ghana"),
        (116, "Cambodia"),
        (231, "Ethiopia"),
        (508, "Mozambique"),
        (180, "Democratic Republic of the Congo"),
        (76, "Brazil"),
        (604, "Peru"),
        (360, "Indonesia"),
        (418, "Laos"),
        (800, "Uganda"),
        (834, "Tanzania"),
    ];
    const NEG: [&str; 6] = [
        "CONTRACT_SIGNED",
        "CONTRACT_CANCELED",
        "UNDER_NEGOTIATION",
        "NEGOTIATIONS_FAILED",
        "ORAL_AGREEMENT",
        "CONTRACT_EXPIRED",
    ];
    const IMPL: [&str; 4] = [
        "IN_OPERATION",
        "PROJECT_ABANDONED",
        "STARTUP_PHASE",
        "PROJECT_NOT_STARTED",
    ];
    const NATURE: [&str; 4] = ["LEASE", "CONCESSION", "OUTRIGHT_PURCHASE", "EXPLOITATION_PERMIT"];
    const INTENT: [&str; 6] = [
        "BIOFUELS",
        "FOOD_CROPS",
        "TIMBER_PLANTATION",
        "MINING",
        "RENEWABLE_ENERGY",
        "LIVESTOCK",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..600)
        .map(|i| Deal {
            id: 1000 + i,
            country: *COUNTRIES.choose(&mut rng).unwrap_or(&COUNTRIES[0]),
            size: (rng.random_range(50..80_000) as f64).round(),
            year: rng.random_range(2000..2024),
            negotiation: NEG.choose(&mut rng).copied().unwrap_or(NEG[0]),
            implementation: IMPL.choose(&mut rng).copied().unwrap_or(IMPL[0]),
            nature: NATURE.choose(&mut rng).copied().unwrap_or(NATURE[0]),
            intention: INTENT.choose(&mut rng).copied().unwrap_or(INTENT[0]),
        })
        .collect()
}

fn deal_json(d: &Deal) -> Value {
    json!({
        "id": d.id,
        "deal_size": d.size,
        "country": {"id": d.country.0, "name": d.country.1},
        "current_negotiation_status": d.negotiation,
        "current_implementation_status": d.implementation,
    })
}

fn matches(d: &Deal, attribute: &str, value: &str) -> bool {
    let num = value.parse::<f64>().unwrap_or(f64::NAN);
    match attribute {
        "area_min" => d.size >= num,
        "area_max" => d.size <= num,
        "initiation_year_min" => d.year as f64 >= num,
        "country_id" => d.country.0 as f64 == num,
        "negotiation_status" => d.negotiation == value,
        "implementation_status" => d.implementation == value,
        "nature_of_deal" => d.nature == value,
        "intention_of_investment" => d.intention == value,
        _ => false,
    }
}

/// Synthetic API: 400 (REST) or an `errors` body (GraphQL) for unknown
/// resources, attributes and values.
fn synthetic_response(deals: &[Deal], vocab: &AttributeVocabulary, query: &str, dialect: Dialect) -> (u16, String) {
    let reject = |message: String| match dialect {
        Dialect::Rest => (400, json!({ "detail": message }).to_string()),
        Dialect::Graphql => (200, json!({ "errors": [{ "message": message }] }).to_string()),
    };
    let q: CanonicalQuery = match parse(dialect, query) {
        Ok(q) => q,
        Err(e) => return reject(e.to_string()),
    };
    if q.resource != "deals" {
        return reject(format!("unknown resource {}", q.resource));
    }
    let mut selected: Vec<&Deal> = deals.iter().collect();
    for f in q.filters.iter() {
        let name = match dialect {
            Dialect::Rest => f.attribute.as_str(),
            Dialect::Graphql => match f.attribute.strip_prefix("filters.") {
                Some(n) => n,
                None => return reject(format!("unknown argument {}", f.attribute)),
            },
        };
        if !vocab.contains(name) {
            return reject(format!("unknown filter {name}"));
        }
        for v in &f.values {
            if !vocab.allows(name, v) {
                return reject(format!("invalid value {} for {name}", v.raw));
            }
        }
        selected.retain(|d| f.values.iter().any(|v| matches(d, name, &v.canonical)));
    }
    let records: Vec<Value> = selected.into_iter().map(deal_json).collect();
    match dialect {
        Dialect::Rest => (200, Value::Array(records).to_string()),
        Dialect::Graphql => (200, json!({ "data": { "deals": records } }).to_string()),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), BoxError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(&r)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn fresh(path: &PathBuf) -> Result<(), BoxError> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    Ok(())
}

async fn recording_runtime(
    config: &Config,
    answer: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
) -> Result<Runtime, BoxError> {
    fresh(&config.llm.cassette)?;
    let backend: Arc<dyn ChatBackend> = Arc::new(RecordingBackend::new(FnBackend::new(answer), &config.llm.cassette)?);
    Ok(Runtime::assemble(config.clone(), Mode::Cassette, backend, Executor::cassette(vec![])).await?)
}

async fn demo(config_path: &Path) -> Result<(), BoxError> {
    let config = Config::load(config_path)?;
    let corpus = Arc::new(load_corpus_checked(&config.data.corpus)?);
    let vocab = load_vocabulary(&config.data.vocabulary)?;
    let script = corpus.clone();
    let rt = recording_runtime(&config, move |req| scripted_answer(&script, req)).await?;
    let deals = synthetic_deals();
    let mut api: BTreeMap<String, ApiRecord> = BTreeMap::new();
    let mut record = |query: &str, dialect: Dialect| {
        let key = cassette_key(query, dialect);
        api.entry(key.clone()).or_insert_with(|| {
            let (status, body_text) = synthetic_response(&deals, &vocab, query, dialect);
            ApiRecord {
                key,
                dialect,
                status,
                body_text,
                recorded_at: RECORDED_AT.into(),
            }
        });
    };
    for strategy in Strategy::ALL {
        for model in &config.llm.models {
            for dialect in Dialect::ALL {
                for entry in rt.test.iter() {
                    let trace = generate(&entry.question, strategy, dialect, model, &rt.deps).await;
                    if let Some(q) = &trace.extracted_query {
                        record(q, dialect);
                    }
                    if let Some(q) = entry.query(dialect) {
                        record(q, dialect);
                    }
                }
            }
        }
    }
    fresh(&config.api.cassette)?;
    write_jsonl(&config.api.cassette, api.into_values())?;
    println!(
        "wrote {} and {}",
        config.llm.cassette.display(),
        config.api.cassette.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct ApiResponse {
    query: String,
    dialect: Dialect,
    status: u16,
    body: Value,
}

async fn replay(dir: &Path) -> Result<(), BoxError> {
    let config = Config::load(dir.join("nl2api.toml"))?;
    let corpus = load_corpus_checked(&config.data.corpus)?;
    let responses: HashMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("responses.json"))?)?;
    let by_question: HashMap<String, String> = corpus
        .iter()
        .filter_map(|e| responses.get(&e.id).map(|r| (e.question.clone(), r.clone())))
        .collect();
    let rt = recording_runtime(&config, move |req| {
        let q = question_of(req);
        by_question.get(&q).cloned().ok_or(GatewayError::CassetteMiss(q))
    })
    .await?;
    let model = &config.llm.models[0];
    for entry in rt.test.iter() {
        generate(
            &entry.question,
            Strategy::PromptEngineering,
            Dialect::Rest,
            model,
            &rt.deps,
        )
        .await;
    }

    let api: Vec<ApiResponse> = serde_json::from_str(&std::fs::read_to_string(dir.join("api_responses.json"))?)?;
    let records: BTreeMap<String, ApiRecord> = api
        .into_iter()
        .map(|r| {
            let key = cassette_key(&r.query, r.dialect);
            let record = ApiRecord {
                key: key.clone(),
                dialect: r.dialect,
                status: r.status,
                body_text: r.body.to_string(),
                recorded_at: RECORDED_AT.into(),
            };
            (key, record)
        })
        .collect();
    fresh(&config.api.cassette)?;
    write_jsonl(&config.api.cassette, records.into_values())?;
    println!(
        "wrote {} and {}",
        config.llm.cassette.display(),
        config.api.cassette.display()
    );
    Ok(())
}
