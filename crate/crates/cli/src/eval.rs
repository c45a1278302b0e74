use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use futures::stream::{self, StreamExt};
use nl2api_core::evaluator::{aggregate_with, evaluate_sample, render_report, EvalOutcome, ReportFormat, SampleStatus};
use nl2api_core::query::Dialect;
use nl2api_core::runtime::Runtime;
use nl2api_core::strategies::{generate, Strategy};

use crate::ask::{parse_dialect, parse_strategy};
use crate::failure::{Failure, GENERAL};
use crate::{AggregateArgs, Context};

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma-separated strategy ids; defaults to all three.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// Comma-separated models; defaults to `llm.models`.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated dialects; defaults to REST,GRAPHQL.
    #[arg(long, value_delimiter = ',')]
    dialects: Vec<String>,
    /// Output directory; defaults to `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples evaluated concurrently. Output order does not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    aggregate: AggregateArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Outcomes file; defaults to `<run.out_dir>/outcomes.jsonl`.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    aggregate: AggregateArgs,
}

/// Parse an outcomes file; unreadable lines (an interrupted write) are skipped.
pub fn load_outcomes(path: &Path) -> Result<Vec<EvalOutcome>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::usage(format!("outcomes not found: {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(o) => out.push(o),
            Err(e) => tracing::warn!(line = i + 1, error = %e, "skipping unreadable outcome"),
        }
    }
    Ok(out)
}

/// Scored outcomes from a previous run, latest wins per combination.
fn resumable(path: &Path) -> Result<Vec<EvalOutcome>, Failure> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    let mut kept: Vec<EvalOutcome> = load_outcomes(path)?
        .into_iter()
        .rev()
        .filter(|o| seen.insert(o.combo_key()))
        .filter(|o| o.status == SampleStatus::Scored)
        .collect();
    kept.reverse();
    Ok(kept)
}

fn write_line(file: &mut fs::File, outcome: &EvalOutcome) -> Result<(), Failure> {
    let mut line = serde_json::to_string(outcome).map_err(Failure::general)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

fn write_reports(dir: &Path, outcomes: &[EvalOutcome], agg: &AggregateArgs) -> Result<String, Failure> {
    let rows = aggregate_with(outcomes, agg.options());
    let markdown = render_report(&rows, ReportFormat::Markdown, agg.decimals);
    fs::write(dir.join("report.md"), &markdown)?;
    fs::write(
        dir.join("report.csv"),
        render_report(&rows, ReportFormat::Csv, agg.decimals),
    )?;
    Ok(markdown)
}

pub async fn run(ctx: &Context, args: EvalArgs) -> Result<(), Failure> {
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies
            .iter()
            .map(|s| parse_strategy(s))
            .collect::<Result<_, _>>()?
    };
    let dialects: Vec<Dialect> = if args.dialects.is_empty() {
        Dialect::ALL.to_vec()
    } else {
        args.dialects
            .iter()
            .map(|s| parse_dialect(s))
            .collect::<Result<_, _>>()?
    };
    let models = if args.models.is_empty() {
        ctx.config.llm.models.clone()
    } else {
        args.models.clone()
    };
    if let Some(m) = models.iter().find(|m| !ctx.config.llm.models.contains(m)) {
        return Err(Failure::usage(format!(
            "unknown model `{m}` (configured: {})",
            ctx.config.llm.models.join(", ")
        )));
    }

    let rt = Runtime::build(ctx.config.clone(), ctx.mode).await?;
    let dir = args.out.unwrap_or_else(|| ctx.config.run.out_dir.clone());
    fs::create_dir_all(&dir)?;
    let path = dir.join(OUTCOMES_FILE);

    let mut outcomes = resumable(&path)?;
    let done: HashSet<_> = outcomes.iter().map(EvalOutcome::combo_key).collect();
    let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(&path)?;
    for o in &outcomes {
        write_line(&mut file, o)?;
    }
    if !done.is_empty() {
        tracing::info!(resumed = done.len(), "skipping already scored samples");
    }

    let mut tasks = Vec::new();
    for &strategy in &strategies {
        for model in &models {
            for &dialect in &dialects {
                for entry in rt.test.iter().filter(|e| e.query(dialect).is_some()) {
                    if !done.contains(&(strategy, model.clone(), dialect, entry.id.clone())) {
                        tasks.push((strategy, model.as_str(), dialect, entry));
                    }
                }
            }
        }
    }
    let total = tasks.len();
    let rt_ref = &rt;
    let mut results = stream::iter(tasks)
        .map(|(strategy, model, dialect, entry)| async move {
            let trace = generate(&entry.question, strategy, dialect, model, &rt_ref.deps).await;
            evaluate_sample(entry, &trace, &rt_ref.executor).await
        })
        .buffered(args.jobs.max(1));
    let mut finished = 0;
    while let Some(outcome) = results.next().await {
        finished += 1;
        tracing::info!(
            "[{finished}/{total}] {} {} {} {}: {:?} valid={}",
            outcome.strategy,
            outcome.model,
            outcome.dialect,
            outcome.entry_id,
            outcome.status,
            outcome.syntax_valid
        );
        write_line(&mut file, &outcome)?;
        outcomes.push(outcome);
    }

    let markdown = write_reports(&dir, &outcomes, &args.aggregate)?;
    let scored = outcomes.iter().filter(|o| o.status == SampleStatus::Scored).count();
    println!("{markdown}");
    println!(
        "{scored} of {} samples scored; outcomes and reports in {}",
        outcomes.len(),
        dir.display()
    );
    if scored == 0 {
        return Err(Failure::new(GENERAL, "no samples scored"));
    }
    Ok(())
}

pub fn report(ctx: &Context, args: ReportArgs) -> Result<(), Failure> {
    let path = args
        .outcomes
        .unwrap_or_else(|| ctx.config.run.out_dir.join(OUTCOMES_FILE));
    let outcomes = load_outcomes(&path)?;
    let rows = aggregate_with(&outcomes, args.aggregate.options());
    let format = match args.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let text = render_report(&rows, format, args.aggregate.decimals);
    match args.out {
        Some(out) => fs::write(out, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
