//! Pull a candidate query out of a raw completion.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::query::Dialect;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("model produced no query")]
pub struct NoQueryFound;

static REST_TARGET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[^\s"'<>`]+|/api/[^\s"'<>`]+"#).unwrap_or_else(|e| panic!("{e}")));

static GRAPHQL_START: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bquery\b(?:\s+[_A-Za-z][_0-9A-Za-z]*)?\s*(?:\([^)]*\))?\s*\{").unwrap_or_else(|e| panic!("{e}"))
});

const TRAILING_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', ')', ']', '}', '\'', '"', '*'];

/// Strip code fences and prose, returning the first query in the requested dialect.
///
/// Fenced blocks are searched first, then the whole text. REST takes the
/// first `http(s)://` URL or `/api/` path; GraphQL the first block opening
/// with `query` or `{`, up to its matching brace.
pub fn extract_query(raw: &str, dialect: Dialect) -> Result<String, NoQueryFound> {
    let find = |text: &str| match dialect {
        Dialect::Rest => find_rest(text),
        Dialect::Graphql => find_graphql(text),
    };
    for block in fenced_blocks(raw) {
        if let Some(found) = find(&block) {
            return Ok(found);
        }
    }
    find(&strip_fence_markers(raw)).ok_or(NoQueryFound)
}

fn find_rest(text: &str) -> Option<String> {
    let m = REST_TARGET.find(text)?;
    let url = m.as_str().trim_end_matches(TRAILING_PUNCTUATION);
    (!url.is_empty() && url != "/api/").then(|| url.to_string())
}

fn find_graphql(text: &str) -> Option<String> {
    let keyword = GRAPHQL_START.find(text).map(|m| m.start());
    let brace = text.find('{');
    let start = match (keyword, brace) {
        (Some(k), Some(b)) => k.min(b),
        (Some(k), None) => k,
        (None, Some(b)) => b,
        (None, None) => return None,
    };
    let open = start + text[start..].find('{')?;
    let end = matching_brace(text, open).map_or(text.len(), |i| i + 1);
    let candidate = text[start..end].trim();
    (!candidate.is_empty()).then(|| candidate.to_string())
}

fn matching_brace(text: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[open..].char_indices() {
        if in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Contents of ``` fenced blocks in order; an unterminated fence runs to the end.
fn fenced_blocks(raw: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = match after.find('\n') {
            Some(nl) if is_info_string(&after[..nl]) => nl + 1,
            _ => 0,
        };
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(body[..close].trim().to_string());
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body.trim().to_string());
                break;
            }
        }
    }
    blocks
}

fn is_info_string(s: &str) -> bool {
    let s = s.trim();
    s.chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '+' | '.'))
}

fn strip_fence_markers(raw: &str) -> String {
    raw.lines()
        .map(|line| {
            let t = line.trim_start();
            match t.strip_prefix("```") {
                Some(info) if is_info_string(info) => "",
                _ => line,
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fenced_graphql() {
        assert_eq!(
            extract_query("```graphql\nquery { deals { id } }\n```", Dialect::Graphql).unwrap(),
            "query { deals { id } }"
        );
    }

    #[test]
    fn rest_url_in_prose() {
        assert_eq!(
            extract_query(
                "Here is your request: https://landmatrix.org/api/deals/?area_min=1000 - enjoy!",
                Dialect::Rest
            )
            .unwrap(),
            "https://landmatrix.org/api/deals/?area_min=1000"
        );
    }

    #[test]
    fn refusal_has_no_query() {
        assert_eq!(extract_query("I cannot answer this.", Dialect::Rest), Err(NoQueryFound));
        assert_eq!(
            extract_query("I cannot answer this.", Dialect::Graphql),
            Err(NoQueryFound)
        );
        assert_eq!(extract_query("", Dialect::Graphql), Err(NoQueryFound));
    }

    #[test]
    fn rest_variants() {
        let cases = [
            ("GET /api/deals/?country_id=450.", "/api/deals/?country_id=450"),
            (
                "See [the API](https://landmatrix.org/api/deals/?limit=5).",
                "https://landmatrix.org/api/deals/?limit=5",
            ),
            (
                "```\nhttps://landmatrix.org/api/deals/?a=1\n```\nOr also /api/deals/?b=2",
                "https://landmatrix.org/api/deals/?a=1",
            ),
            (
                "Request: `/api/deals/?nature_of_deal=OUTRIGHT_PURCHASE`",
                "/api/deals/?nature_of_deal=OUTRIGHT_PURCHASE",
            ),
            (
                "**https://landmatrix.org/api/deals/?x=1**",
                "https://landmatrix.org/api/deals/?x=1",
            ),
        ];
        for (raw, want) in cases {
            assert_eq!(extract_query(raw, Dialect::Rest).unwrap(), want, "{raw}");
        }
    }

    #[test]
    fn graphql_variants() {
        let cases = [
            (
                "Here is the query you asked for:\n\nquery { deals(limit: 5) { id } }\n\nHope it helps.",
                "query { deals(limit: 5) { id } }",
            ),
            (
                "```\n{ deals { id country { name } } }\n```",
                "{ deals { id country { name } } }",
            ),
            (
                "```graphql\nquery Deals {\n  deals(filters: {note: \"a } b\"}) { id }\n}\n```",
                "query Deals {\n  deals(filters: {note: \"a } b\"}) { id }\n}",
            ),
            ("```query { deals { id } }```", "query { deals { id } }"),
            ("query { deals { id }", "query { deals { id }"),
        ];
        for (raw, want) in cases {
            assert_eq!(extract_query(raw, Dialect::Graphql).unwrap(), want, "{raw}");
        }
    }

    #[test]
    fn dialect_specific_blocks() {
        let raw = "```\nSome explanation\n```\n```graphql\nquery { deals { id } }\n```";
        assert_eq!(extract_query(raw, Dialect::Graphql).unwrap(), "query { deals { id } }");
        assert_eq!(extract_query(raw, Dialect::Rest), Err(NoQueryFound));
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent(prefix in "[A-Za-z .,:!]{0,20}", body in "[a-z_]{1,8}", n in 0u32..10000, suffix in "[A-Za-z .,!]{0,20}", fenced in any::<bool>()) {
            let gql = format!("query {{ deals({body}: {n}) {{ id }} }}");
            let rest = format!("https://landmatrix.org/api/deals/?{body}={n}");
            for (dialect, q) in [(Dialect::Graphql, gql), (Dialect::Rest, rest)] {
                let raw = if fenced {
                    format!("{prefix}\n```\n{q}\n```\n{suffix}")
                } else {
                    format!("{prefix} {q} {suffix}")
                };
                if let Ok(first) = extract_query(&raw, dialect) {
                    prop_assert_eq!(extract_query(&first, dialect).unwrap(), first.clone());
                }
            }
        }
    }
}
