use std::collections::BTreeSet;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};

use super::{CanonicalQuery, Dialect, FilterSet, NormalizedValue, QueryError};

const DEFAULT_RESOURCE: &str = "deals";

/// Bytes escaped in serialized keys and values.
const COMPONENT: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'#')
    .add(b'%')
    .add(b'&')
    .add(b'+')
    .add(b'=')
    .add(b'?')
    .add(b'<')
    .add(b'>')
    .add(b'`')
    .add(b'{')
    .add(b'}')
    .add(b'|')
    .add(b'\\')
    .add(b'^')
    .add(b'[')
    .add(b']')
    .add(b'/');

/// Parse an absolute URL, an absolute path, or a bare query string.
///
/// Repeated keys merge into one multi-valued filter. Keys and values are
/// percent-decoded before normalization; `+` is literal.
pub fn parse_rest(text: &str) -> Result<CanonicalQuery, QueryError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(QueryError::MalformedUrl("empty input".into()));
    }

    let (path, query) = split_target(trimmed)?;
    let resource = resource_from_path(&path)?;

    let mut filters = FilterSet::new();
    if let Some(query) = query {
        for (position, pair) in query.split('&').enumerate() {
            if pair.is_empty() {
                continue;
            }
            let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
            let key = decode(key)?;
            if key.is_empty() {
                return Err(QueryError::EmptyKey(position));
            }
            filters.insert(&key, NormalizedValue::new(decode(value)?));
        }
    }

    Ok(CanonicalQuery {
        dialect: Dialect::Rest,
        resource,
        filters,
        selection: BTreeSet::new(),
        raw: text.to_string(),
    })
}

/// `/api/<resource>/?k=v&...` with keys sorted and repeated keys for multi-values.
pub fn serialize_rest(q: &CanonicalQuery) -> String {
    let mut out = format!("/api/{}/", utf8_percent_encode(&q.resource, COMPONENT));
    let mut pairs = Vec::new();
    for filter in q.filters.iter() {
        for value in &filter.values {
            pairs.push(format!(
                "{}={}",
                utf8_percent_encode(&filter.attribute, COMPONENT),
                utf8_percent_encode(value.raw.trim(), COMPONENT)
            ));
        }
    }
    if !pairs.is_empty() {
        out.push('?');
        out.push_str(&pairs.join("&"));
    }
    out
}

fn split_target(text: &str) -> Result<(String, Option<String>), QueryError> {
    let lower = text.to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") || text.contains("://") {
        let url = url::Url::parse(text).map_err(|e| QueryError::MalformedUrl(e.to_string()))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(QueryError::MalformedUrl(format!(
                "unsupported scheme `{}`",
                url.scheme()
            )));
        }
        return Ok((url.path().to_string(), url.query().map(str::to_string)));
    }

    let without_fragment = text.split('#').next().unwrap_or_default();
    if let Some(rest) = without_fragment.strip_prefix('?') {
        return Ok((String::new(), Some(rest.to_string())));
    }
    if let Some((path, query)) = without_fragment.split_once('?') {
        return Ok((path.to_string(), Some(query.to_string())));
    }
    if !without_fragment.starts_with('/') && without_fragment.contains('=') {
        return Ok((String::new(), Some(without_fragment.to_string())));
    }
    Ok((without_fragment.to_string(), None))
}

fn resource_from_path(path: &str) -> Result<String, QueryError> {
    if path.chars().any(char::is_whitespace) {
        return Err(QueryError::MalformedUrl(format!("whitespace in path `{path}`")));
    }
    let mut segments = path.split('/').filter(|s| !s.is_empty()).peekable();
    if segments.peek() == Some(&"api") {
        segments.next();
    }
    match segments.next() {
        Some(segment) => decode(segment),
        None => Ok(DEFAULT_RESOURCE.to_string()),
    }
}

fn decode(s: &str) -> Result<String, QueryError> {
    percent_decode_str(s)
        .decode_utf8()
        .map(|c| c.into_owned())
        .map_err(|_| QueryError::MalformedUrl(format!("invalid UTF-8 after percent-decoding `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::Filter;
    use proptest::prelude::*;

    const INTRO_URL: &str =
        "https://landmatrix.org/api/deals/?area_min=1000&negotiation_status=CONTRACT_CANCELED&initiation_year_min=2016";

    #[test]
    fn intro_example() {
        let q = parse_rest(INTRO_URL).unwrap();
        assert_eq!(q.resource, "deals");
        assert_eq!(q.filters.len(), 3);
        let expected: FilterSet = [
            Filter::new("area_min", ["1000"]),
            Filter::new("negotiation_status", ["CONTRACT_CANCELED"]),
            Filter::new("initiation_year_min", ["2016"]),
        ]
        .into_iter()
        .collect();
        assert_eq!(q.filters, expected);
        assert!(q.selection.is_empty());
    }

    #[test]
    fn intro_example_serializes_sorted() {
        let q = parse_rest(INTRO_URL).unwrap();
        assert_eq!(
            serialize_rest(&q),
            "/api/deals/?area_min=1000&initiation_year_min=2016&negotiation_status=CONTRACT_CANCELED"
        );
    }

    #[test]
    fn bare_path_has_no_filters() {
        let q = parse_rest("/api/deals/").unwrap();
        assert_eq!(q.resource, "deals");
        assert!(q.filters.is_empty());
        assert_eq!(serialize_rest(&q), "/api/deals/");
    }

    #[test]
    fn repeated_keys_merge() {
        let q = parse_rest("/api/deals/?country_id=104&country_id=288").unwrap();
        assert_eq!(q.filters.len(), 1);
        assert_eq!(
            q.filters.get("country_id").unwrap().canonical_values(),
            vec!["104", "288"]
        );
        assert_eq!(serialize_rest(&q), "/api/deals/?country_id=104&country_id=288");
    }

    #[test]
    fn bare_query_string_defaults_to_deals() {
        for text in ["area_min=1000", "?area_min=1000"] {
            let q = parse_rest(text).unwrap();
            assert_eq!(q.resource, "deals");
            assert!(q.filters.contains("area_min"));
        }
    }

    #[test]
    fn other_resources_and_fragments() {
        let q = parse_rest("/api/investors/?name=Acme#top").unwrap();
        assert_eq!(q.resource, "investors");
        assert_eq!(q.filters.get("name").unwrap().canonical_values(), vec!["ACME"]);
    }

    #[test]
    fn empty_key_is_rejected() {
        assert_eq!(parse_rest("/api/deals/?area_min=5&=3"), Err(QueryError::EmptyKey(1)));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_rest("   "), Err(QueryError::MalformedUrl(_))));
        assert!(matches!(parse_rest("http://"), Err(QueryError::MalformedUrl(_))));
        assert!(matches!(
            parse_rest("ftp://landmatrix.org/api/deals/"),
            Err(QueryError::MalformedUrl(_))
        ));
        assert!(matches!(
            parse_rest("/api/deals/?x=%FF"),
            Err(QueryError::MalformedUrl(_))
        ));
    }

    #[test]
    fn percent_decoding_and_encoding() {
        let q = parse_rest("/api/deals/?country=C%C3%B4te%20d%27Ivoire&crop=a%26b").unwrap();
        assert_eq!(
            q.filters.get("country").unwrap().canonical_values(),
            vec!["côte d'ivoire"]
        );
        let again = parse_rest(&serialize_rest(&q)).unwrap();
        assert_eq!(q, again);
        assert_eq!(again.filters.get("crop").unwrap().canonical_values(), vec!["a&b"]);
    }

    fn pair_strategy() -> impl Strategy<Value = (String, String)> {
        ("[a-z_]{1,8}", "[A-Za-z0-9_ .-]{0,8}")
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec(pair_strategy(), 0..6), seed in any::<u64>()) {
            let encode = |pairs: &[(String, String)]| pairs
                .iter()
                .map(|(k, v)| format!("{}={}", k, utf8_percent_encode(v, COMPONENT)))
                .collect::<Vec<_>>()
                .join("&");
            let mut shuffled = pairs.clone();
            // deterministic rotation + reversal as a permutation
            if !shuffled.is_empty() {
                let r = (seed as usize) % shuffled.len();
                shuffled.rotate_left(r);
                if seed % 2 == 0 { shuffled.reverse(); }
            }
            let a = parse_rest(&format!("/api/deals/?{}", encode(&pairs))).unwrap();
            let b = parse_rest(&format!("/api/deals/?{}", encode(&shuffled))).unwrap();
            prop_assert_eq!(&a, &b);
            let round = parse_rest(&serialize_rest(&a)).unwrap();
            prop_assert_eq!(&a, &round);
        }

        #[test]
        fn unreserved_percent_encoding_is_transparent(value in "[A-Za-z0-9._~-]{1,10}") {
            let encoded: String = value.bytes().map(|b| format!("%{b:02X}")).collect();
            let plain = parse_rest(&format!("/api/deals/?k={value}")).unwrap();
            let escaped = parse_rest(&format!("/api/deals/?k={encoded}")).unwrap();
            prop_assert_eq!(plain, escaped);
        }
    }
}
