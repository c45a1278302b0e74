//! Natural-language to REST/GraphQL query generation and benchmarking for the
//! Land Matrix deals API.

pub mod config;
pub mod corpus;
pub mod evaluator;
pub mod executor;
pub mod llm;
pub mod query;
pub mod runtime;
pub mod service;
pub mod strategies;
pub mod vector;

pub use config::Config;
pub use corpus::{Corpus, CorpusEntry};
pub use evaluator::{AttributeConfusion, EvalOutcome, ReportRow};
pub use executor::{ExecutionResult, Executor, Mode};
pub use llm::{ChatRequest, ChatResponse, Gateway};
pub use query::{CanonicalQuery, Dialect, Filter, FilterSet, NormalizedValue};
pub use runtime::Runtime;
pub use strategies::{GenerationTrace, PromptBundle, Strategy};
