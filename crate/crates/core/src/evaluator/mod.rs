//! Per-sample metrics and per-(strategy, model, dialect) aggregation.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;

use serde::{Deserialize, Serialize};

pub use report::{format_percent, render_report, ReportFormat, CSV_COLUMNS};

use crate::corpus::CorpusEntry;
use crate::executor::{ExecError, Executor};
use crate::query::{parse, Dialect, FilterSet};
use crate::strategies::{GenerationTrace, Strategy};

/// `|a ∩ b| / |a ∪ b|`; two empty sets agree perfectly.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Matched attributes whose value sets are also equal.
    pub tp_values: u64,
}

impl Add for AttributeConfusion {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tp_values: self.tp_values + o.tp_values,
        }
    }
}

/// Match filters by attribute name.
pub fn attribute_confusion(reference: &FilterSet, generated: &FilterSet) -> AttributeConfusion {
    let mut c = AttributeConfusion::default();
    for filter in reference.iter() {
        match generated.get(&filter.attribute) {
            Some(g) => {
                c.tp += 1;
                if g.values == filter.values {
                    c.tp_values += 1;
                }
            }
            None => c.fn_ += 1,
        }
    }
    c.fp = generated.iter().filter(|f| !reference.contains(&f.attribute)).count() as u64;
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub value_score: f64,
}

/// Scores in `[0, 1]`. A zero denominator scores 1.0 only when both filter sets are empty.
pub fn sample_scores(c: &AttributeConfusion) -> Scores {
    let both_empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            if both_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if both_empty {
        1.0
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        accuracy: ratio(c.tp, c.tp + c.fp + c.fn_),
        f1,
        value_score: ratio(c.tp_values, c.tp + c.fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Scored,
    /// Infrastructure failure; excluded from every denominator.
    Unscored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub entry_id: String,
    pub strategy: Strategy,
    pub model: String,
    pub dialect: Dialect,
    pub status: SampleStatus,
    pub syntax_valid: bool,
    pub result_jaccard: Option<f64>,
    pub confusion: Option<AttributeConfusion>,
    /// Executed fine but the local parser rejected it, so no filter metrics.
    #[serde(default)]
    pub parser_gap: bool,
    pub generated_query: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub trace_digest: String,
}

impl EvalOutcome {
    fn new(entry: &CorpusEntry, trace: &GenerationTrace) -> Self {
        Self {
            entry_id: entry.id.clone(),
            strategy: trace.strategy,
            model: trace.model.clone(),
            dialect: trace.dialect,
            status: SampleStatus::Scored,
            syntax_valid: false,
            result_jaccard: None,
            confusion: None,
            parser_gap: false,
            generated_query: trace.extracted_query.clone(),
            notes: Vec::new(),
            trace_digest: trace.digest(),
        }
    }

    fn unscored(mut self, note: String) -> Self {
        self.status = SampleStatus::Unscored;
        self.syntax_valid = false;
        self.result_jaccard = None;
        self.confusion = None;
        self.notes.push(note);
        self
    }

    /// Combination key used for resumption.
    pub fn combo_key(&self) -> (Strategy, String, Dialect, String) {
        (self.strategy, self.model.clone(), self.dialect, self.entry_id.clone())
    }
}

/// Execute generated and expert queries and compare them.
pub async fn evaluate_sample(entry: &CorpusEntry, trace: &GenerationTrace, executor: &Executor) -> EvalOutcome {
    let mut out = EvalOutcome::new(entry, trace);
    if let Some(err) = &trace.error {
        if err.unscored {
            return out.unscored(format!("{}: {}", err.code, err.message));
        }
        out.notes.push(err.code.clone());
    }
    let Some(expert) = entry.query(trace.dialect) else {
        return out.unscored(format!("entry has no {} query", trace.dialect));
    };
    let Some(generated) = trace.extracted_query.as_deref() else {
        return out;
    };
    let gen_result = match executor.execute(generated, trace.dialect).await {
        Ok(r) => r,
        Err(e) => return out.unscored(exec_note(&e)),
    };
    out.notes.extend(gen_result.warnings.iter().cloned());
    if !gen_result.valid {
        return out;
    }
    out.syntax_valid = true;
    let ref_result = match executor.execute(expert, trace.dialect).await {
        Ok(r) => r,
        Err(e) => return out.unscored(exec_note(&e)),
    };
    if !ref_result.valid {
        out.notes.push("expert query did not execute".into());
    }
    out.result_jaccard = Some(jaccard(&gen_result.result_ids, &ref_result.result_ids));

    match (parse(trace.dialect, expert), parse(trace.dialect, generated)) {
        (Ok(r), Ok(g)) => out.confusion = Some(attribute_confusion(&r.filters, &g.filters)),
        (Err(e), _) => {
            out.parser_gap = true;
            out.notes.push(format!("expert query does not parse: {e}"));
        }
        (_, Err(e)) => {
            out.parser_gap = true;
            out.notes.push(format!("ParserGap: {e}"));
        }
    }
    out
}

fn exec_note(e: &ExecError) -> String {
    match e {
        ExecError::CassetteMiss(_) => format!("api_cassette_miss: {e}"),
        ExecError::Transport(_) => format!("api_transport: {e}"),
        ExecError::Cassette(_) => format!("api_cassette_io: {e}"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidQueryMeasure {
    /// Share of executable queries.
    #[default]
    Rate,
    /// Mean attribute-set Jaccard between generated and expert query; invalid counts 0.
    QueryJaccard,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AggregateOptions {
    pub averaging: Averaging,
    /// Average result Jaccard over valid samples only instead of all scored ones.
    pub valid_result_over_valid_only: bool,
    pub valid_query: ValidQueryMeasure,
}

/// One report line; percentages in `[0, 100]`. Filter scores are absent
/// when no valid sample could be compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub model: String,
    pub dialect: Dialect,
    pub n_samples: usize,
    pub n_valid: usize,
    pub n_unscored: usize,
    pub valid_query_rate: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub value_score: Option<f64>,
    pub valid_result: Option<f64>,
}

pub fn aggregate(outcomes: &[EvalOutcome]) -> Vec<ReportRow> {
    aggregate_with(outcomes, AggregateOptions::default())
}

/// Group by (strategy, model, dialect), rows ordered by their string ids.
/// Result is independent of input order.
pub fn aggregate_with(outcomes: &[EvalOutcome], opts: AggregateOptions) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<&EvalOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups
            .entry((o.strategy.as_str(), o.model.as_str(), o.dialect.as_str()))
            .or_default()
            .push(o);
    }
    groups
        .into_values()
        .map(|mut group| {
            group.sort_by(|a, b| {
                a.entry_id
                    .cmp(&b.entry_id)
                    .then_with(|| a.trace_digest.cmp(&b.trace_digest))
            });
            row(&group, opts)
        })
        .collect()
}

fn row(group: &[&EvalOutcome], opts: AggregateOptions) -> ReportRow {
    let first = group[0];
    let scored: Vec<&EvalOutcome> = group
        .iter()
        .copied()
        .filter(|o| o.status == SampleStatus::Scored)
        .collect();
    let valid: Vec<&EvalOutcome> = scored.iter().copied().filter(|o| o.syntax_valid).collect();
    let confusions: Vec<AttributeConfusion> = valid.iter().filter_map(|o| o.confusion).collect();
    let pct = |num: f64, den: usize| (den > 0).then(|| 100.0 * num / den as f64);

    let filter_scores = if confusions.is_empty() {
        None
    } else {
        Some(match opts.averaging {
            Averaging::Micro => sample_scores(&confusions.iter().fold(AttributeConfusion::default(), |a, c| a + *c)),
            Averaging::Macro => {
                let all: Vec<Scores> = confusions.iter().map(sample_scores).collect();
                let n = all.len() as f64;
                let mean = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / n;
                Scores {
                    precision: mean(|s| s.precision),
                    recall: mean(|s| s.recall),
                    accuracy: mean(|s| s.accuracy),
                    f1: mean(|s| s.f1),
                    value_score: mean(|s| s.value_score),
                }
            }
        })
    };

    let valid_query_rate = match opts.valid_query {
        ValidQueryMeasure::Rate => pct(valid.len() as f64, scored.len()),
        ValidQueryMeasure::QueryJaccard => pct(
            valid
                .iter()
                .filter_map(|o| o.confusion.map(|c| sample_scores(&c).accuracy))
                .sum(),
            scored.len(),
        ),
    }
    .unwrap_or(0.0);

    let result_pool = if opts.valid_result_over_valid_only {
        &valid
    } else {
        &scored
    };
    let valid_result = pct(
        result_pool.iter().filter_map(|o| o.result_jaccard).sum(),
        result_pool.len(),
    );

    ReportRow {
        strategy: first.strategy,
        model: first.model.clone(),
        dialect: first.dialect,
        n_samples: scored.len(),
        n_valid: valid.len(),
        n_unscored: group.len() - scored.len(),
        valid_query_rate,
        precision: filter_scores.map(|s| 100.0 * s.precision),
        recall: filter_scores.map(|s| 100.0 * s.recall),
        accuracy: filter_scores.map(|s| 100.0 * s.accuracy),
        f1: filter_scores.map(|s| 100.0 * s.f1),
        value_score: filter_scores.map(|s| 100.0 * s.value_score),
        valid_result,
    }
}
