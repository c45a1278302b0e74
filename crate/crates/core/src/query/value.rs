//! Value normalization shared by both query dialects.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Syntactic class of a filter value, decided from its text alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Number,
    Boolean,
    /// Enum-like bare token such as `CONTRACT_CANCELED`.
    Identifier,
    Text,
}

/// How a GraphQL literal was written, kept so serialization can reproduce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralStyle {
    #[default]
    Bare,
    Quoted,
}

/// A filter value with its canonical comparison form.
///
/// Equality, ordering and hashing use `(kind, canonical)` only, so `"1000.0"`
/// and `1000` or `canceled` and `CANCELED` collapse to one value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedValue {
    pub raw: String,
    pub kind: ValueKind,
    pub canonical: String,
    #[serde(default)]
    pub style: LiteralStyle,
}

impl NormalizedValue {
    pub fn new(raw: impl Into<String>) -> Self {
        Self::with_style(raw, LiteralStyle::Bare)
    }

    pub fn with_style(raw: impl Into<String>, style: LiteralStyle) -> Self {
        let raw = raw.into();
        let (kind, canonical) = normalize(&raw);
        Self {
            raw,
            kind,
            canonical,
            style,
        }
    }
}

impl PartialEq for NormalizedValue {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.canonical == other.canonical
    }
}

impl Eq for NormalizedValue {}

impl Hash for NormalizedValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.canonical.hash(state);
    }
}

impl PartialOrd for NormalizedValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NormalizedValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical.cmp(&other.canonical).then(self.kind.cmp(&other.kind))
    }
}

impl fmt::Display for NormalizedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// Classify `raw` and compute its canonical form.
///
/// Numbers lose sign noise, leading zeros, trailing fraction zeros and
/// exponents; booleans lowercase; identifiers uppercase; free text has its
/// whitespace collapsed and is lowercased. Applying `normalize` to a canonical
/// form returns it unchanged.
pub fn normalize(raw: &str) -> (ValueKind, String) {
    let trimmed = raw.trim();
    if let Some(found) = classify_token(trimmed) {
        return found;
    }
    let folded = trimmed.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    // case folding can turn exotic letters into ASCII (e.g. the Kelvin sign)
    classify_token(&folded).unwrap_or((ValueKind::Text, folded))
}

fn classify_token(s: &str) -> Option<(ValueKind, String)> {
    if let Some(number) = canonical_number(s) {
        return Some((ValueKind::Number, number));
    }
    if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("false") {
        return Some((ValueKind::Boolean, s.to_ascii_lowercase()));
    }
    if is_identifier(s) {
        return Some((ValueKind::Identifier, s.to_ascii_uppercase()));
    }
    None
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Exact decimal canonicalization on the digit string; never goes through f64.
fn canonical_number(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut i = 0;
    let mut negative = false;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        negative = bytes[i] == b'-';
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = &s[int_start..i];
    let mut frac_digits = "";
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        frac_digits = &s[frac_start..i];
        if frac_digits.is_empty() {
            return None;
        }
    }
    if int_digits.is_empty() {
        return None;
    }
    let mut exponent: i64 = 0;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        let exp_start = i;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if digits_start == i || i - digits_start > 6 {
            return None;
        }
        exponent = s[exp_start..i].parse().ok()?;
    }
    if i != bytes.len() {
        return None;
    }

    // value = 0.<digits> shifted: digits with the decimal point after `point` digits
    let digits: String = format!("{int_digits}{frac_digits}");
    let point = int_digits.len() as i64 + exponent;
    let digits = digits.trim_start_matches('0');
    let leading_zeros_removed = format!("{int_digits}{frac_digits}").len() - digits.len();
    let point = point - leading_zeros_removed as i64;
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        return Some("0".to_string());
    }

    let mut out = String::new();
    if negative {
        out.push('-');
    }
    let len = digits.len() as i64;
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(digits);
    } else if point >= len {
        out.push_str(digits);
        out.extend(std::iter::repeat_n('0', (point - len) as usize));
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numbers_drop_noise() {
        assert_eq!(normalize("1000.0"), (ValueKind::Number, "1000".into()));
        assert_eq!(normalize("001000"), (ValueKind::Number, "1000".into()));
        assert_eq!(normalize("+5"), (ValueKind::Number, "5".into()));
        assert_eq!(normalize("-0.0"), (ValueKind::Number, "0".into()));
        assert_eq!(normalize("1e3"), (ValueKind::Number, "1000".into()));
        assert_eq!(normalize("12.50"), (ValueKind::Number, "12.5".into()));
        assert_eq!(normalize("0.0012"), (ValueKind::Number, "0.0012".into()));
        assert_eq!(normalize("1.5E-3"), (ValueKind::Number, "0.0015".into()));
        assert_eq!(normalize("-042.100"), (ValueKind::Number, "-42.1".into()));
        assert_eq!(
            normalize("123456789012345678901234567890"),
            (ValueKind::Number, "123456789012345678901234567890".into())
        );
    }

    #[test]
    fn non_numbers() {
        assert_eq!(normalize("1."), (ValueKind::Text, "1.".into()));
        assert_eq!(normalize("1,000"), (ValueKind::Text, "1,000".into()));
        assert_eq!(normalize("TRUE"), (ValueKind::Boolean, "true".into()));
        assert_eq!(
            normalize("contract_canceled"),
            (ValueKind::Identifier, "CONTRACT_CANCELED".into())
        );
        assert_eq!(normalize("  Sierra   Leone "), (ValueKind::Text, "sierra leone".into()));
        assert_eq!(normalize(""), (ValueKind::Text, "".into()));
    }

    #[test]
    fn equality_ignores_raw_spelling() {
        assert_eq!(NormalizedValue::new("1000.0"), NormalizedValue::new("1000"));
        assert_eq!(
            NormalizedValue::new("Contract_Canceled"),
            NormalizedValue::with_style("CONTRACT_CANCELED", LiteralStyle::Quoted)
        );
        assert_ne!(NormalizedValue::new("1000"), NormalizedValue::new("100"));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "\\PC{0,12}|[+-]?[0-9]{1,8}(\\.[0-9]{1,6})?([eE][+-]?[0-9]{1,2})?|[A-Za-z_][A-Za-z0-9_ ]{0,10}") {
            let (kind, canonical) = normalize(&raw);
            let (kind2, canonical2) = normalize(&canonical);
            prop_assert_eq!(kind, kind2);
            prop_assert_eq!(canonical, canonical2);
        }
    }
}
