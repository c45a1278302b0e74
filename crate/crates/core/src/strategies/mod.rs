//! Prompt engineering, retrieval-augmented and two-agent query generation.

mod agent;
mod templates;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use agent::{
    agent_one_prompt, extract_entities, parse_bindings, resolve_entity_values, screen_bindings, AgentOneOutput,
    EntityBinding,
};
pub use templates::{render_template, Templates, PLACEHOLDERS};

use crate::corpus::{AttributeKind, AttributeSpec, AttributeVocabulary, Corpus, CorpusEntry, SchemaContext};
use crate::llm::{extract_query, ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::query::Dialect;
use crate::vector::{embed, Embedder, VectorError, VectorIndex};

/// Few-shot pairs used by prompt engineering.
pub const STATIC_EXAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PromptEngineering,
    Rag,
    Agentic,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::PromptEngineering, Strategy::Rag, Strategy::Agentic];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::PromptEngineering => "prompt_engineering",
            Strategy::Rag => "rag",
            Strategy::Agentic => "agentic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy {0:?} (valid: prompt_engineering, rag, agentic)")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "prompt_engineering" => Ok(Strategy::PromptEngineering),
            "rag" => Ok(Strategy::Rag),
            "agentic" => Ok(Strategy::Agentic),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instruction: String,
    pub context: String,
    pub question: String,
    pub dialect: Dialect,
}

impl PromptBundle {
    /// Instruction, question, context.
    pub fn render(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.instruction, self.question, self.context)
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(&self.instruction),
            ChatMessage::user(format!("{}\n\n{}", self.question, self.context)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceError {
    pub code: String,
    pub message: String,
    /// Infrastructure failure (missing recording, unreachable backend); the
    /// sample is excluded from scoring instead of counted invalid.
    pub unscored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub question: String,
    pub strategy: Strategy,
    pub model: String,
    pub dialect: Dialect,
    pub prompts: Vec<PromptBundle>,
    pub raw_outputs: Vec<String>,
    pub extracted_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bindings: Option<Vec<EntityBinding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_examples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TraceError>,
}

impl GenerationTrace {
    fn new(question: &str, strategy: Strategy, model: &str, dialect: Dialect) -> Self {
        Self {
            question: question.to_string(),
            strategy,
            model: model.to_string(),
            dialect,
            prompts: Vec::new(),
            raw_outputs: Vec::new(),
            extracted_query: None,
            bindings: None,
            retrieved_examples: None,
            warnings: Vec::new(),
            error: None,
        }
    }

    /// 64-bit hex digest of the serialized trace.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        Sha256::digest(json.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("no static examples for {0}")]
    MissingExamples(Dialect),
    #[error("strategy needs a vector index and embedding backend")]
    MissingIndex,
    #[error("empty question")]
    EmptyQuestion,
    #[error(transparent)]
    Retrieval(#[from] VectorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model produced no query")]
    NoQuery,
}

impl StrategyError {
    fn to_trace(&self) -> TraceError {
        let (code, unscored) = match self {
            StrategyError::MissingExamples(_) => ("missing_examples", true),
            StrategyError::MissingIndex => ("missing_index", true),
            StrategyError::EmptyQuestion => ("empty_question", false),
            StrategyError::Retrieval(e) => (
                "retrieval_error",
                matches!(e, VectorError::FixtureMiss(_) | VectorError::BackendUnavailable(_)),
            ),
            StrategyError::Gateway(e) => (
                e.code(),
                matches!(
                    e,
                    GatewayError::CassetteMiss(_)
                        | GatewayError::CassetteCollision(_)
                        | GatewayError::Cassette(_)
                        | GatewayError::Unreachable(_)
                        | GatewayError::Unauthorized
                ),
            ),
            StrategyError::NoQuery => ("no_query_found", false),
        };
        TraceError {
            code: code.to_string(),
            message: self.to_string(),
            unscored,
        }
    }
}

/// Embedding backend plus the index built with it.
#[derive(Clone)]
pub struct Retriever {
    pub index: Arc<VectorIndex>,
    pub embedder: Arc<dyn Embedder>,
}

/// Read-only inputs shared by every generation.
#[derive(Clone)]
pub struct Deps {
    /// Pool of retrievable (question, query) pairs; the index covers these entries.
    pub pool: Arc<Corpus>,
    pub vocab: Arc<AttributeVocabulary>,
    pub schema: Arc<SchemaContext>,
    pub templates: Arc<Templates>,
    pub retriever: Option<Retriever>,
    pub gateway: Gateway,
    pub k: usize,
    /// Model for agent 1 when it differs from the generating model.
    pub agent1_model: Option<String>,
}

/// One line per attribute; enumerated attributes carry their full value list.
pub fn describe_attribute(name: &str, spec: &AttributeSpec) -> String {
    let kind = match spec.value_kind {
        AttributeKind::Enumerated => "enumerated",
        AttributeKind::Numeric => "numeric",
        AttributeKind::FreeText => "free text",
        AttributeKind::Identifier => "identifier",
    };
    let mut line = format!("- {name} ({kind})");
    if !spec.description.is_empty() {
        line.push_str(": ");
        line.push_str(&spec.description);
    }
    if spec.value_kind == AttributeKind::Enumerated {
        if let Some(values) = &spec.allowed_values {
            line.push_str(if spec.description.is_empty() {
                ": values "
            } else {
                "; values "
            });
            line.push_str(&values.join(", "));
        }
    }
    line
}

pub fn vocabulary_listing(vocab: &AttributeVocabulary) -> String {
    vocab
        .iter()
        .map(|(name, spec)| describe_attribute(name, spec))
        .collect::<Vec<_>>()
        .join("\n")
}

fn examples_block<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    pairs
        .into_iter()
        .map(|(q, query)| format!("Question: {q}\nQuery: {query}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn bundle(
    question: &str,
    dialect: Dialect,
    schema: &SchemaContext,
    templates: &Templates,
    context_template: &str,
    examples: &str,
    values: &str,
) -> PromptBundle {
    let vars = [
        ("question", question),
        ("schema", schema.schema_text.as_str()),
        ("rules", schema.api_rules.as_str()),
        ("examples", examples),
        ("values_fragment", values),
        ("dialect", dialect.label()),
    ];
    PromptBundle {
        instruction: render_template(&templates.instruction, &vars),
        context: render_template(context_template, &vars),
        question: question.to_string(),
        dialect,
    }
}

/// Static instruction, full vocabulary listing and fixed few-shot examples.
pub fn build_prompt_engineering(
    question: &str,
    schema: &SchemaContext,
    vocab: &AttributeVocabulary,
    dialect: Dialect,
    templates: &Templates,
) -> Result<PromptBundle, StrategyError> {
    let pairs = schema.static_examples.for_dialect(dialect);
    if pairs.is_empty() {
        return Err(StrategyError::MissingExamples(dialect));
    }
    let examples = examples_block(
        pairs
            .iter()
            .take(STATIC_EXAMPLES)
            .map(|p| (p.question.as_str(), p.query.as_str())),
    );
    Ok(bundle(
        question,
        dialect,
        schema,
        templates,
        &templates.context,
        &examples,
        &vocabulary_listing(vocab),
    ))
}

/// Top-`k` pool entries by question similarity that have a query in `dialect`.
pub async fn retrieve<'a>(
    question: &str,
    dialect: Dialect,
    retriever: &Retriever,
    pool: &'a Corpus,
    k: usize,
) -> Result<Vec<&'a CorpusEntry>, StrategyError> {
    if k == 0 {
        return Err(VectorError::InvalidK.into());
    }
    let query = embed(question, retriever.embedder.as_ref()).await?;
    let ranking = retriever.index.top_k(&query, retriever.index.len())?;
    Ok(ranking
        .iter()
        .filter_map(|hit| pool.get(&hit.entry_id))
        .filter(|e| e.query(dialect).is_some())
        .take(k)
        .collect())
}

/// Like prompt engineering, with the retrieved pairs in place of the static examples.
/// Returns the bundle and the retrieved entry ids in similarity order.
pub async fn build_rag(
    question: &str,
    dialect: Dialect,
    deps: &Deps,
) -> Result<(PromptBundle, Vec<String>), StrategyError> {
    let retriever = deps.retriever.as_ref().ok_or(StrategyError::MissingIndex)?;
    let hits = retrieve(question, dialect, retriever, &deps.pool, deps.k).await?;
    let examples = examples_block(
        hits.iter()
            .map(|e| (e.question.as_str(), e.query(dialect).unwrap_or_default())),
    );
    let ids = hits.iter().map(|e| e.id.clone()).collect();
    let b = bundle(
        question,
        dialect,
        &deps.schema,
        &deps.templates,
        &deps.templates.context,
        &examples,
        &vocabulary_listing(&deps.vocab),
    );
    Ok((b, ids))
}

/// Agent-2 prompt: retrieved examples, the raw bindings and the values of bound attributes only.
pub fn build_agent_two(
    question: &str,
    dialect: Dialect,
    bindings: &[EntityBinding],
    examples: &[&CorpusEntry],
    schema: &SchemaContext,
    vocab: &AttributeVocabulary,
    templates: &Templates,
) -> PromptBundle {
    let examples = examples_block(
        examples
            .iter()
            .map(|e| (e.question.as_str(), e.query(dialect).unwrap_or_default())),
    );
    let pairs = bindings
        .iter()
        .map(|b| format!("[{}: {}]", b.entity, b.value))
        .collect::<Vec<_>>()
        .join("\n");
    let resolved = resolve_entity_values(bindings, vocab);
    let values = match (pairs.is_empty(), resolved.is_empty()) {
        (true, _) => "none".to_string(),
        (false, true) => pairs,
        (false, false) => format!("{pairs}\n\n{resolved}"),
    };
    bundle(
        question,
        dialect,
        schema,
        templates,
        &templates.agent2_context,
        &examples,
        &values,
    )
}

/// Run one strategy end to end. Failures are recorded in the trace, never returned.
pub async fn generate(
    question: &str,
    strategy: Strategy,
    dialect: Dialect,
    model: &str,
    deps: &Deps,
) -> GenerationTrace {
    let mut trace = GenerationTrace::new(question, strategy, model, dialect);
    let outcome = if question.trim().is_empty() {
        Err(StrategyError::EmptyQuestion)
    } else {
        match strategy {
            Strategy::PromptEngineering => run_prompt_engineering(&mut trace, deps).await,
            Strategy::Rag => run_rag(&mut trace, deps).await,
            Strategy::Agentic => run_agentic(&mut trace, deps).await,
        }
    };
    if let Err(e) = outcome {
        trace.error = Some(e.to_trace());
    }
    trace
}

async fn finish(trace: &mut GenerationTrace, prompt: PromptBundle, deps: &Deps) -> Result<(), StrategyError> {
    let request = ChatRequest::new(&trace.model, prompt.messages());
    trace.prompts.push(prompt);
    let response = deps.gateway.complete(&request).await?;
    let extracted = extract_query(&response.text, trace.dialect);
    trace.raw_outputs.push(response.text);
    trace.extracted_query = Some(extracted.map_err(|_| StrategyError::NoQuery)?);
    Ok(())
}

async fn run_prompt_engineering(trace: &mut GenerationTrace, deps: &Deps) -> Result<(), StrategyError> {
    let prompt = build_prompt_engineering(
        &trace.question,
        &deps.schema,
        &deps.vocab,
        trace.dialect,
        &deps.templates,
    )?;
    finish(trace, prompt, deps).await
}

async fn run_rag(trace: &mut GenerationTrace, deps: &Deps) -> Result<(), StrategyError> {
    let (prompt, ids) = build_rag(&trace.question, trace.dialect, deps).await?;
    trace.retrieved_examples = Some(ids);
    finish(trace, prompt, deps).await
}

async fn run_agentic(trace: &mut GenerationTrace, deps: &Deps) -> Result<(), StrategyError> {
    let retriever = deps.retriever.as_ref().ok_or(StrategyError::MissingIndex)?;
    let agent1_model = deps.agent1_model.as_deref().unwrap_or(&trace.model).to_string();
    let prompt1 = agent_one_prompt(&trace.question, &deps.vocab, &deps.templates, trace.dialect);
    trace.prompts.push(prompt1);
    let first = extract_entities(
        &trace.question,
        &deps.vocab,
        &deps.gateway,
        &agent1_model,
        &deps.templates,
        trace.dialect,
    )
    .await?;
    trace.raw_outputs.push(first.raw);
    trace.warnings.extend(first.warnings);
    trace.bindings = Some(first.bindings.clone());

    let hits = retrieve(&trace.question, trace.dialect, retriever, &deps.pool, deps.k).await?;
    trace.retrieved_examples = Some(hits.iter().map(|e| e.id.clone()).collect());
    let prompt2 = build_agent_two(
        &trace.question,
        trace.dialect,
        &first.bindings,
        &hits,
        &deps.schema,
        &deps.vocab,
        &deps.templates,
    );
    finish(trace, prompt2, deps).await
}
