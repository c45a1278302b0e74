//! Dialect-neutral query representation.
//!
//! REST query strings and GraphQL documents both parse into a
//! [`CanonicalQuery`]: a resource, an attribute-keyed set of [`Filter`]s and,
//! for GraphQL, the set of selected field paths. Metrics diff queries through
//! this representation only.

mod graphql;
mod rest;
mod value;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graphql::{parse_graphql, serialize_graphql};
pub use rest::{parse_rest, serialize_rest};
pub use value::{normalize, LiteralStyle, NormalizedValue, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dialect {
    #[serde(rename = "REST", alias = "rest")]
    Rest,
    #[serde(rename = "GRAPHQL", alias = "graphql")]
    Graphql,
}

impl Dialect {
    pub const ALL: [Dialect; 2] = [Dialect::Rest, Dialect::Graphql];

    pub fn as_str(self) -> &'static str {
        match self {
            Dialect::Rest => "REST",
            Dialect::Graphql => "GRAPHQL",
        }
    }

    /// Human label used in prompts and report headers.
    pub fn label(self) -> &'static str {
        match self {
            Dialect::Rest => "REST",
            Dialect::Graphql => "GraphQL",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rest" => Ok(Dialect::Rest),
            "graphql" | "gql" => Ok(Dialect::Graphql),
            other => Err(format!("unknown dialect `{other}` (expected rest or graphql)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("malformed URL: {0}")]
    MalformedUrl(String),
    #[error("empty parameter key at position {0}")]
    EmptyKey(usize),
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("document contains more than one operation")]
    MultipleOperations,
    #[error("empty selection set")]
    EmptySelection,
}

/// One attribute constraint with its (non-empty) value set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Filter {
    pub attribute: String,
    pub values: BTreeSet<NormalizedValue>,
}

impl Filter {
    pub fn new<I, V>(attribute: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = V>,
        V: Into<String>,
    {
        Self {
            attribute: attribute.into(),
            values: values.into_iter().map(|v| NormalizedValue::new(v)).collect(),
        }
    }

    pub fn canonical_values(&self) -> Vec<&str> {
        self.values.iter().map(|v| v.canonical.as_str()).collect()
    }
}

/// Filters keyed by attribute name; inserting an existing attribute merges values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterSet(BTreeMap<String, Filter>);

impl FilterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, attribute: &str, value: NormalizedValue) {
        self.0
            .entry(attribute.to_string())
            .or_insert_with(|| Filter {
                attribute: attribute.to_string(),
                values: BTreeSet::new(),
            })
            .values
            .insert(value);
    }

    pub fn get(&self, attribute: &str) -> Option<&Filter> {
        self.0.get(attribute)
    }

    pub fn contains(&self, attribute: &str) -> bool {
        self.0.contains_key(attribute)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Filters in attribute order.
    pub fn iter(&self) -> impl Iterator<Item = &Filter> {
        self.0.values()
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

impl FromIterator<Filter> for FilterSet {
    fn from_iter<T: IntoIterator<Item = Filter>>(iter: T) -> Self {
        let mut set = FilterSet::new();
        for filter in iter {
            for value in filter.values {
                set.insert(&filter.attribute, value);
            }
        }
        set
    }
}

/// Parsed query in either dialect. Equality ignores `raw`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalQuery {
    pub dialect: Dialect,
    pub resource: String,
    pub filters: FilterSet,
    pub selection: BTreeSet<String>,
    pub raw: String,
}

impl PartialEq for CanonicalQuery {
    fn eq(&self, other: &Self) -> bool {
        self.dialect == other.dialect
            && self.resource == other.resource
            && self.filters == other.filters
            && self.selection == other.selection
    }
}

impl Eq for CanonicalQuery {}

impl CanonicalQuery {
    pub fn filter_set(&self) -> &FilterSet {
        &self.filters
    }

    /// Deterministic text form; see [`serialize`].
    pub fn serialize(&self) -> String {
        serialize(self)
    }
}

pub fn parse(dialect: Dialect, text: &str) -> Result<CanonicalQuery, QueryError> {
    match dialect {
        Dialect::Rest => parse_rest(text),
        Dialect::Graphql => parse_graphql(text),
    }
}

/// Deterministic rendering: filters sorted by attribute, values by canonical form.
pub fn serialize(q: &CanonicalQuery) -> String {
    match q.dialect {
        Dialect::Rest => serialize_rest(q),
        Dialect::Graphql => serialize_graphql(q),
    }
}

pub fn filter_set(q: &CanonicalQuery) -> &FilterSet {
    &q.filters
}
