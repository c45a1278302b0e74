use std::collections::BTreeMap;
use std::fmt::Write;

use super::ReportRow;
use crate::query::Dialect;
use crate::strategies::Strategy;

pub const CSV_COLUMNS: [&str; 13] = [
    "strategy",
    "model",
    "dialect",
    "n_samples",
    "n_valid",
    "n_unscored",
    "valid_query_rate",
    "precision",
    "recall",
    "accuracy",
    "f1",
    "value_score",
    "valid_result",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Round half up to `decimals` places. The epsilon absorbs binary noise such
/// as `14.499999999999998` for an exact 14.5.
pub fn format_percent(value: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let rounded = ((value * scale) + 0.5 + 1e-9).floor() / scale;
    format!("{rounded:.decimals$}")
}

fn cell(value: Option<f64>, decimals: usize) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{}%", format_percent(v, decimals)))
}

fn strategy_label(s: Strategy) -> &'static str {
    match s {
        Strategy::PromptEngineering => "Prompt engineering",
        Strategy::Rag => "RAG",
        Strategy::Agentic => "Agentic",
    }
}

/// Markdown: validity, REST filters, GraphQL filters and result accuracy tables.
/// CSV: one line per row with the columns of [`CSV_COLUMNS`].
pub fn render_report(rows: &[ReportRow], format: ReportFormat, decimals: usize) -> String {
    match format {
        ReportFormat::Markdown => markdown(rows, decimals),
        ReportFormat::Csv => csv_text(rows, decimals),
    }
}

type Pair<'a> = (Option<&'a ReportRow>, Option<&'a ReportRow>);

fn by_approach(rows: &[ReportRow]) -> BTreeMap<(Strategy, &str), Pair<'_>> {
    let mut map: BTreeMap<(Strategy, &str), Pair<'_>> = BTreeMap::new();
    for r in rows {
        let slot = map.entry((r.strategy, r.model.as_str())).or_default();
        match r.dialect {
            Dialect::Rest => slot.0 = Some(r),
            Dialect::Graphql => slot.1 = Some(r),
        }
    }
    map
}

fn markdown(rows: &[ReportRow], d: usize) -> String {
    let grouped = by_approach(rows);
    let mut out = String::new();

    out.push_str("### Query validity\n\n| Approach | Model | Valid Query for REST | Valid Query for GraphQL |\n|---|---|---|---|\n");
    for ((s, m), (rest, gql)) in &grouped {
        let _ = writeln!(
            out,
            "| {} | {m} | {} | {} |",
            strategy_label(*s),
            cell(rest.map(|r| r.valid_query_rate), d),
            cell(gql.map(|r| r.valid_query_rate), d)
        );
    }

    for dialect in [Dialect::Rest, Dialect::Graphql] {
        let _ = write!(
            out,
            "\n### Filter accuracy ({})\n\n| Approach | Model | Precision | Recall | Accuracy | F1-score | Value-score |\n|---|---|---|---|---|---|---|\n",
            dialect.label()
        );
        for ((s, m), (rest, gql)) in &grouped {
            let row = if dialect == Dialect::Rest { rest } else { gql };
            let Some(r) = row else { continue };
            let _ = writeln!(
                out,
                "| {} | {m} | {} | {} | {} | {} | {} |",
                strategy_label(*s),
                cell(r.precision, d),
                cell(r.recall, d),
                cell(r.accuracy, d),
                cell(r.f1, d),
                cell(r.value_score, d)
            );
        }
    }

    out.push_str("\n### Result accuracy\n\n| Approach | Model | Valid Result for REST | Valid Result for GraphQL |\n|---|---|---|---|\n");
    for ((s, m), (rest, gql)) in &grouped {
        let _ = writeln!(
            out,
            "| {} | {m} | {} | {} |",
            strategy_label(*s),
            cell(rest.and_then(|r| r.valid_result), d),
            cell(gql.and_then(|r| r.valid_result), d)
        );
    }
    out
}

fn csv_text(rows: &[ReportRow], d: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let pct = |v: Option<f64>| v.map(|v| format_percent(v, d)).unwrap_or_default();
    let _ = w.write_record(CSV_COLUMNS);
    for r in rows {
        let _ = w.write_record([
            r.strategy.as_str().to_string(),
            r.model.clone(),
            r.dialect.as_str().to_string(),
            r.n_samples.to_string(),
            r.n_valid.to_string(),
            r.n_unscored.to_string(),
            format_percent(r.valid_query_rate, d),
            pct(r.precision),
            pct(r.recall),
            pct(r.accuracy),
            pct(r.f1),
            pct(r.value_score),
            pct(r.valid_result),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}
