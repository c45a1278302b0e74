use clap::Args;
use nl2api_core::executor::result_records;
use nl2api_core::query::Dialect;
use nl2api_core::runtime::Runtime;
use nl2api_core::strategies::{generate, Strategy};

use crate::failure::{Failure, BACKEND, GENERAL, NO_QUERY};
use crate::Context;

#[derive(Debug, Args)]
pub struct AskArgs {
    question: String,
    #[arg(long, default_value = "prompt_engineering")]
    strategy: String,
    /// Defaults to the first configured model.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "REST")]
    dialect: String,
    /// Print every result record instead of `service.result_cap`.
    #[arg(long)]
    full: bool,
}

pub fn parse_strategy(s: &str) -> Result<Strategy, Failure> {
    s.parse()
        .map_err(|e: nl2api_core::strategies::UnknownStrategy| Failure::usage(e.to_string()))
}

pub fn parse_dialect(s: &str) -> Result<Dialect, Failure> {
    s.parse()
        .map_err(|_| Failure::usage(format!("unknown dialect `{s}` (valid: REST, GRAPHQL)")))
}

/// Exit code for a generation failure code.
pub fn generation_exit(code: &str) -> u8 {
    match code {
        "no_query_found" => NO_QUERY,
        "llm_timeout" | "llm_unreachable" | "llm_unauthorized" | "missing_index" | "retrieval_error" => BACKEND,
        _ => GENERAL,
    }
}

pub async fn run(ctx: &Context, args: AskArgs) -> Result<(), Failure> {
    let strategy = parse_strategy(&args.strategy)?;
    let dialect = parse_dialect(&args.dialect)?;
    let rt = Runtime::build(ctx.config.clone(), ctx.mode).await?;
    let model = args.model.unwrap_or_else(|| rt.config.llm.models[0].clone());

    let trace = generate(&args.question, strategy, dialect, &model, &rt.deps).await;
    let Some(query) = trace.extracted_query.clone() else {
        let err = trace.error.unwrap_or_else(unreachable_trace);
        return Err(Failure::new(generation_exit(&err.code), err.message));
    };
    println!("query: {query}");
    let result = rt
        .executor
        .execute(&query, dialect)
        .await
        .map_err(|e| Failure::new(BACKEND, e.to_string()))?;
    println!("valid: {}", result.valid);
    if let Some(status) = result.status {
        println!("status: {status}");
    }
    let records = result
        .payload
        .as_ref()
        .filter(|_| result.valid)
        .and_then(|p| result_records(p, dialect).ok())
        .unwrap_or_default();
    let cap = if args.full {
        usize::MAX
    } else {
        rt.config.service.result_cap
    };
    println!("results: {}", records.len());
    for record in records.iter().take(cap) {
        println!("  {record}");
    }
    if records.len() > cap {
        println!("  ... {} more (use --full)", records.len() - cap);
    }
    for w in &result.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn unreachable_trace() -> nl2api_core::strategies::TraceError {
    nl2api_core::strategies::TraceError {
        code: "generation_failed".into(),
        message: "generation produced no query".into(),
        unscored: false,
    }
}
