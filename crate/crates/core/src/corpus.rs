//! Annotated question/query corpus, attribute vocabulary and schema context.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{self, Dialect, NormalizedValue, QueryError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("entry `{id}` has an unparseable {dialect} query: {cause}")]
    UnparseableQuery {
        id: String,
        dialect: Dialect,
        cause: QueryError,
    },
    #[error("corpus needs at least 2 entries to split")]
    CorpusTooSmall,
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("malformed vocabulary: {0}")]
    MalformedVocabulary(String),
    #[error("enumerated attribute `{0}` has no allowed values")]
    EnumeratedWithoutValues(String),
    #[error("malformed schema context: {0}")]
    MalformedSchema(String),
}

fn io_error(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphql_query: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl CorpusEntry {
    pub fn query(&self, dialect: Dialect) -> Option<&str> {
        match dialect {
            Dialect::Rest => self.rest_query.as_deref(),
            Dialect::Graphql => self.graphql_query.as_deref(),
        }
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                message: "empty id".into(),
            });
        }
        if self.id.contains(char::is_whitespace) {
            return Err(CorpusError::MalformedRecord {
                line,
                message: format!("id `{}` contains whitespace", self.id),
            });
        }
        if self.question.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                message: format!("entry `{}` has an empty question", self.id),
            });
        }
        if self.rest_query.is_none() && self.graphql_query.is_none() {
            return Err(CorpusError::MalformedRecord {
                line,
                message: format!("entry `{}` has neither rest_query nor graphql_query", self.id),
            });
        }
        for dialect in Dialect::ALL {
            if let Some(text) = self.query(dialect) {
                query::parse(dialect, text).map_err(|cause| CorpusError::UnparseableQuery {
                    id: self.id.clone(),
                    dialect,
                    cause,
                })?;
            }
        }
        Ok(())
    }
}

/// Validated entries in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    /// Validates every entry and rejects duplicate ids.
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, entry) in entries.iter().enumerate() {
            entry.validate(i + 1)?;
            if !seen.insert(entry.id.as_str()) {
                return Err(CorpusError::DuplicateId(entry.id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CorpusEntry> {
        self.entries.iter()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            // CorpusEntry contains only strings; serialization cannot fail
            out.push_str(&serde_json::to_string(entry).unwrap_or_default());
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a CorpusEntry;
    type IntoIter = std::slice::Iter<'a, CorpusEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Parse line-delimited JSON records. Blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        entry.validate(line_no)?;
        if !seen.insert(entry.id.clone()) {
            return Err(CorpusError::DuplicateId(entry.id));
        }
        entries.push(entry);
    }
    Ok(Corpus { entries })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_corpus(&text)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, corpus.to_jsonl()).map_err(|e| io_error(path, e))
}

/// Seeded shuffle split into `(dev, test)`, each keeping corpus order.
///
/// `|test| = round(test_fraction * |corpus|)` clamped to `[1, |corpus| - 1]`.
pub fn split_corpus(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if corpus.len() < 2 {
        return Err(CorpusError::CorpusTooSmall);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(test_fraction));
    }
    let n = corpus.len();
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let test_idx: BTreeSet<usize> = order[..n_test].iter().copied().collect();

    let (mut dev, mut test) = (Vec::new(), Vec::new());
    for (i, entry) in corpus.entries.iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(entry.clone());
        } else {
            dev.push(entry.clone());
        }
    }
    Ok((Corpus { entries: dev }, Corpus { entries: test }))
}

/// Split by `dev` / `test` tags; untagged entries go to dev.
pub fn split_by_tags(corpus: &Corpus) -> (Corpus, Corpus) {
    let (test, dev): (Vec<_>, Vec<_>) = corpus
        .entries
        .iter()
        .cloned()
        .partition(|e| e.tags.iter().any(|t| t == "test"));
    (Corpus { entries: dev }, Corpus { entries: test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Enumerated,
    Numeric,
    FreeText,
    Identifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub value_kind: AttributeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<Vec<String>>,
    #[serde(default)]
    pub description: String,
}

/// Attribute schema keyed by case-sensitive attribute name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVocabulary {
    attributes: BTreeMap<String, AttributeSpec>,
}

impl AttributeVocabulary {
    pub fn new(attributes: BTreeMap<String, AttributeSpec>) -> Result<Self, CorpusError> {
        for (name, spec) in &attributes {
            if name.is_empty() {
                return Err(CorpusError::MalformedVocabulary("empty attribute name".into()));
            }
            if spec.value_kind == AttributeKind::Enumerated && spec.allowed_values.as_ref().is_none_or(|v| v.is_empty())
            {
                return Err(CorpusError::EnumeratedWithoutValues(name.clone()));
            }
        }
        Ok(Self { attributes })
    }

    pub fn get(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.attributes.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AttributeSpec)> {
        self.attributes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Resolve a query filter attribute, falling back to its last dotted segment
    /// (`filters.negotiation_status` resolves as `negotiation_status`).
    pub fn resolve(&self, attribute: &str) -> Option<(&str, &AttributeSpec)> {
        if let Some((k, v)) = self.attributes.get_key_value(attribute) {
            return Some((k.as_str(), v));
        }
        let last = attribute.rsplit('.').next()?;
        self.attributes.get_key_value(last).map(|(k, v)| (k.as_str(), v))
    }

    /// Whether `value` matches one of the attribute's allowed values after normalization.
    pub fn allows(&self, attribute: &str, value: &NormalizedValue) -> bool {
        match self.get(attribute) {
            Some(spec) => match &spec.allowed_values {
                Some(values) => values.iter().any(|v| NormalizedValue::new(v.as_str()) == *value),
                None => true,
            },
            None => false,
        }
    }
}

pub fn parse_vocabulary(text: &str) -> Result<AttributeVocabulary, CorpusError> {
    let attributes: BTreeMap<String, AttributeSpec> =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedVocabulary(e.to_string()))?;
    AttributeVocabulary::new(attributes)
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<AttributeVocabulary, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_vocabulary(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub question: String,
    pub query: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticExamples {
    #[serde(default)]
    pub rest: Vec<ExamplePair>,
    #[serde(default)]
    pub graphql: Vec<ExamplePair>,
}

impl StaticExamples {
    pub fn for_dialect(&self, dialect: Dialect) -> &[ExamplePair] {
        match dialect {
            Dialect::Rest => &self.rest,
            Dialect::Graphql => &self.graphql,
        }
    }
}

/// Schema description, API rules and the fixed few-shot examples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaContext {
    pub schema_text: String,
    pub api_rules: String,
    #[serde(default)]
    pub static_examples: StaticExamples,
}

impl SchemaContext {
    /// Fill missing static examples from `pool`: the first `per_dialect`
    /// entries (in corpus order) that carry a query in that dialect.
    pub fn with_examples_from(mut self, pool: &Corpus, per_dialect: usize) -> Self {
        for dialect in Dialect::ALL {
            let slot = match dialect {
                Dialect::Rest => &mut self.static_examples.rest,
                Dialect::Graphql => &mut self.static_examples.graphql,
            };
            if slot.is_empty() {
                *slot = pool
                    .iter()
                    .filter_map(|e| {
                        e.query(dialect).map(|q| ExamplePair {
                            question: e.question.clone(),
                            query: q.to_string(),
                        })
                    })
                    .take(per_dialect)
                    .collect();
            }
        }
        self
    }
}

pub fn load_schema_context(path: impl AsRef<Path>) -> Result<SchemaContext, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let ctx: SchemaContext = serde_json::from_str(&text).map_err(|e| CorpusError::MalformedSchema(e.to_string()))?;
    if ctx.schema_text.trim().is_empty() {
        return Err(CorpusError::MalformedSchema("schema_text is empty".into()));
    }
    Ok(ctx)
}

/// One enumerated value used by a corpus query that the vocabulary does not know.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintWarning {
    pub entry_id: String,
    pub dialect: Dialect,
    pub attribute: String,
    pub value: String,
}

/// Check every enumerated filter value in the corpus against the vocabulary.
pub fn lint_corpus(corpus: &Corpus, vocab: &AttributeVocabulary) -> Vec<LintWarning> {
    let mut warnings = Vec::new();
    for entry in corpus {
        for dialect in Dialect::ALL {
            let Some(text) = entry.query(dialect) else {
                continue;
            };
            let Ok(parsed) = query::parse(dialect, text) else {
                continue;
            };
            for filter in parsed.filters.iter() {
                let Some((name, spec)) = vocab.resolve(&filter.attribute) else {
                    continue;
                };
                if spec.value_kind != AttributeKind::Enumerated {
                    continue;
                }
                for value in &filter.values {
                    if !vocab.allows(name, value) {
                        warnings.push(LintWarning {
                            entry_id: entry.id.clone(),
                            dialect,
                            attribute: filter.attribute.clone(),
                            value: value.raw.clone(),
                        });
                    }
                }
            }
        }
    }
    warnings
}
