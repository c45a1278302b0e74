//! A small GraphQL reader covering read-only queries.
//!
//! Supported: a single `query` operation (named or anonymous, or a bare
//! selection set), fields with aliases (ignored) and arguments, nested
//! selection sets, and scalar/enum/list/object values. Variables, directives,
//! fragments, mutations and subscriptions are rejected with a syntax error.

use std::collections::{BTreeMap, BTreeSet};

use super::{CanonicalQuery, Dialect, FilterSet, LiteralStyle, NormalizedValue, QueryError};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Punct(char),
    Spread,
    Name(String),
    Number(String),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(String),
    Str(String),
    Bool(bool),
    Null,
    Enum(String),
    List(Vec<Value>),
    Object(Vec<(String, Value)>),
}

#[derive(Debug, Clone)]
struct Field {
    name: String,
    arguments: Vec<(String, Value)>,
    selection: Option<Vec<Field>>,
}

fn syntax(offset: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, QueryError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' | b',' => i += 1,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'!' | b'$' | b'&' | b'(' | b')' | b':' | b'=' | b'@' | b'[' | b']' | b'{' | b'|' | b'}' => {
                tokens.push((i, Token::Punct(c as char)));
                i += 1;
            }
            b'.' => {
                if src[i..].starts_with("...") {
                    tokens.push((i, Token::Spread));
                    i += 3;
                } else {
                    return Err(syntax(i, "unexpected `.`"));
                }
            }
            b'"' => {
                let start = i;
                if src[i..].starts_with("\"\"\"") {
                    i += 3;
                    let body_start = i;
                    loop {
                        if i >= bytes.len() {
                            return Err(syntax(start, "unterminated block string"));
                        }
                        if bytes[i..].starts_with(b"\\\"\"\"") {
                            i += 4;
                        } else if bytes[i..].starts_with(b"\"\"\"") {
                            break;
                        } else {
                            i += 1;
                        }
                    }
                    let body = src[body_start..i].replace("\\\"\"\"", "\"\"\"");
                    tokens.push((start, Token::Str(body.trim().to_string())));
                    i += 3;
                } else {
                    i += 1;
                    let mut out = String::new();
                    loop {
                        let Some(ch) = src[i..].chars().next() else {
                            return Err(syntax(start, "unterminated string"));
                        };
                        match ch {
                            '"' => {
                                i += 1;
                                break;
                            }
                            '\n' | '\r' => return Err(syntax(i, "newline in string")),
                            '\\' => {
                                let esc = src[i + 1..].chars().next();
                                match esc {
                                    Some('"') => out.push('"'),
                                    Some('\\') => out.push('\\'),
                                    Some('/') => out.push('/'),
                                    Some('b') => out.push('\u{8}'),
                                    Some('f') => out.push('\u{c}'),
                                    Some('n') => out.push('\n'),
                                    Some('r') => out.push('\r'),
                                    Some('t') => out.push('\t'),
                                    Some('u') => {
                                        let hex = src
                                            .get(i + 2..i + 6)
                                            .ok_or_else(|| syntax(i, "truncated unicode escape"))?;
                                        let code = u32::from_str_radix(hex, 16)
                                            .ok()
                                            .and_then(char::from_u32)
                                            .ok_or_else(|| syntax(i, "invalid unicode escape"))?;
                                        out.push(code);
                                        i += 4;
                                    }
                                    _ => return Err(syntax(i, "invalid escape sequence")),
                                }
                                i += 2;
                            }
                            other => {
                                out.push(other);
                                i += other.len_utf8();
                            }
                        }
                    }
                    tokens.push((start, Token::Str(out)));
                }
            }
            b'-' | b'0'..=b'9' => {
                let start = i;
                if c == b'-' {
                    i += 1;
                }
                let digits_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if digits_start == i {
                    return Err(syntax(start, "expected digits"));
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if frac == i {
                        return Err(syntax(start, "expected fraction digits"));
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    let exp = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if exp == i {
                        return Err(syntax(start, "expected exponent digits"));
                    }
                }
                if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    return Err(syntax(i, "invalid number"));
                }
                tokens.push((start, Token::Number(src[start..i].to_string())));
            }
            b'_' | b'a'..=b'z' | b'A'..=b'Z' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((start, Token::Name(src[start..i].to_string())));
            }
            _ => {
                // the UTF-8 BOM is insignificant
                if src[i..].starts_with('\u{feff}') {
                    i += '\u{feff}'.len_utf8();
                } else {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    return Err(syntax(i, format!("unexpected character `{ch}`")));
                }
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        tok
    }

    fn is_punct(&self, c: char) -> bool {
        self.peek() == Some(&Token::Punct(c))
    }

    fn expect_punct(&mut self, c: char) -> Result<(), QueryError> {
        let offset = self.offset();
        match self.next() {
            Some(Token::Punct(p)) if p == c => Ok(()),
            Some(other) => Err(syntax(offset, format!("expected `{c}`, found {}", describe(&other)))),
            None => Err(syntax(offset, format!("expected `{c}`, found end of input"))),
        }
    }

    fn expect_name(&mut self) -> Result<String, QueryError> {
        let offset = self.offset();
        match self.next() {
            Some(Token::Name(n)) => Ok(n),
            Some(other) => Err(syntax(offset, format!("expected a name, found {}", describe(&other)))),
            None => Err(syntax(offset, "expected a name, found end of input")),
        }
    }

    fn document(&mut self) -> Result<Vec<Field>, QueryError> {
        let mut operations = Vec::new();
        while self.peek().is_some() {
            operations.push(self.definition()?);
        }
        match operations.len() {
            0 => Err(syntax(0, "empty document")),
            1 => Ok(operations.pop().unwrap_or_default()),
            _ => Err(QueryError::MultipleOperations),
        }
    }

    fn definition(&mut self) -> Result<Vec<Field>, QueryError> {
        let offset = self.offset();
        match self.peek() {
            Some(Token::Punct('{')) => self.selection_set(),
            Some(Token::Name(keyword)) => match keyword.as_str() {
                "query" => {
                    self.pos += 1;
                    if let Some(Token::Name(_)) = self.peek() {
                        self.pos += 1;
                    }
                    if self.is_punct('(') {
                        return Err(syntax(self.offset(), "variables are not supported"));
                    }
                    if self.is_punct('@') {
                        return Err(syntax(self.offset(), "directives are not supported"));
                    }
                    self.selection_set()
                }
                "fragment" => Err(syntax(offset, "fragments are not supported")),
                "mutation" | "subscription" => Err(syntax(offset, format!("`{keyword}` operations are not supported"))),
                other => Err(syntax(offset, format!("unexpected `{other}`"))),
            },
            Some(other) => Err(syntax(offset, format!("unexpected {}", describe(other)))),
            None => Err(syntax(offset, "unexpected end of input")),
        }
    }

    fn selection_set(&mut self) -> Result<Vec<Field>, QueryError> {
        self.expect_punct('{')?;
        let mut fields = Vec::new();
        loop {
            let offset = self.offset();
            match self.peek() {
                Some(Token::Punct('}')) => {
                    self.pos += 1;
                    break;
                }
                Some(Token::Spread) => return Err(syntax(offset, "fragments are not supported")),
                Some(Token::Name(_)) => fields.push(self.field()?),
                Some(other) => {
                    return Err(syntax(
                        offset,
                        format!("unexpected {} in selection set", describe(other)),
                    ))
                }
                None => return Err(syntax(offset, "unterminated selection set")),
            }
        }
        if fields.is_empty() {
            return Err(QueryError::EmptySelection);
        }
        Ok(fields)
    }

    fn field(&mut self) -> Result<Field, QueryError> {
        let mut name = self.expect_name()?;
        if self.is_punct(':') {
            self.pos += 1;
            name = self.expect_name()?;
        }
        let mut arguments = Vec::new();
        if self.is_punct('(') {
            self.pos += 1;
            loop {
                if self.is_punct(')') {
                    self.pos += 1;
                    break;
                }
                let arg = self.expect_name()?;
                self.expect_punct(':')?;
                arguments.push((arg, self.value()?));
            }
            if arguments.is_empty() {
                return Err(syntax(self.offset(), "empty argument list"));
            }
        }
        if self.is_punct('@') {
            return Err(syntax(self.offset(), "directives are not supported"));
        }
        let selection = if self.is_punct('{') {
            Some(self.selection_set()?)
        } else {
            None
        };
        Ok(Field {
            name,
            arguments,
            selection,
        })
    }

    fn value(&mut self) -> Result<Value, QueryError> {
        let offset = self.offset();
        match self.next() {
            Some(Token::Number(n)) => Ok(Value::Number(n)),
            Some(Token::Str(s)) => Ok(Value::Str(s)),
            Some(Token::Name(n)) => Ok(match n.as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                "null" => Value::Null,
                _ => Value::Enum(n),
            }),
            Some(Token::Punct('$')) => Err(syntax(offset, "variables are not supported")),
            Some(Token::Punct('[')) => {
                let mut items = Vec::new();
                while !self.is_punct(']') {
                    if self.peek().is_none() {
                        return Err(syntax(self.offset(), "unterminated list"));
                    }
                    items.push(self.value()?);
                }
                self.pos += 1;
                Ok(Value::List(items))
            }
            Some(Token::Punct('{')) => {
                let mut members = Vec::new();
                while !self.is_punct('}') {
                    if self.peek().is_none() {
                        return Err(syntax(self.offset(), "unterminated object"));
                    }
                    let key = self.expect_name()?;
                    self.expect_punct(':')?;
                    members.push((key, self.value()?));
                }
                self.pos += 1;
                Ok(Value::Object(members))
            }
            Some(other) => Err(syntax(offset, format!("expected a value, found {}", describe(&other)))),
            None => Err(syntax(offset, "expected a value, found end of input")),
        }
    }
}

fn describe(token: &Token) -> String {
    match token {
        Token::Punct(c) => format!("`{c}`"),
        Token::Spread => "`...`".into(),
        Token::Name(n) => format!("`{n}`"),
        Token::Number(n) => format!("number `{n}`"),
        Token::Str(_) => "string".into(),
    }
}

fn flatten_value(path: &str, value: &Value, filters: &mut FilterSet) {
    match value {
        Value::Number(n) => filters.insert(path, NormalizedValue::new(n.as_str())),
        Value::Str(s) => filters.insert(path, NormalizedValue::with_style(s.as_str(), LiteralStyle::Quoted)),
        Value::Bool(b) => filters.insert(path, NormalizedValue::new(b.to_string())),
        Value::Null => filters.insert(path, NormalizedValue::new("null")),
        Value::Enum(e) => filters.insert(path, NormalizedValue::new(e.as_str())),
        Value::List(items) => {
            for item in items {
                flatten_value(path, item, filters);
            }
        }
        Value::Object(members) => {
            for (key, member) in members {
                flatten_value(&format!("{path}.{key}"), member, filters);
            }
        }
    }
}

fn selection_paths(prefix: &str, fields: &[Field], out: &mut BTreeSet<String>) {
    for field in fields {
        let path = if prefix.is_empty() {
            field.name.clone()
        } else {
            format!("{prefix}.{}", field.name)
        };
        match &field.selection {
            Some(children) => selection_paths(&path, children, out),
            None => {
                out.insert(path);
            }
        }
    }
}

/// Parse a single GraphQL read operation.
///
/// The resource is the first root field. Its arguments become filters:
/// nested objects flatten to dotted paths and list items become extra values
/// of the same path. The selection is the set of dotted leaf paths under that
/// root field.
pub fn parse_graphql(text: &str) -> Result<CanonicalQuery, QueryError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let roots = parser.document()?;
    let root = roots.into_iter().next().ok_or(QueryError::EmptySelection)?;

    let mut filters = FilterSet::new();
    for (name, value) in &root.arguments {
        flatten_value(name, value, &mut filters);
    }
    let children = root.selection.ok_or(QueryError::EmptySelection)?;
    let mut selection = BTreeSet::new();
    selection_paths("", &children, &mut selection);

    Ok(CanonicalQuery {
        dialect: Dialect::Graphql,
        resource: root.name,
        filters,
        selection,
        raw: text.to_string(),
    })
}

#[derive(Default)]
struct ArgNode {
    values: Vec<NormalizedValue>,
    children: BTreeMap<String, ArgNode>,
}

impl ArgNode {
    fn insert(&mut self, path: &[&str], value: &NormalizedValue) {
        match path.split_first() {
            None => self.values.push(value.clone()),
            Some((head, rest)) => self
                .children
                .entry((*head).to_string())
                .or_default()
                .insert(rest, value),
        }
    }

    fn render(&self) -> String {
        let mut items: Vec<String> = self.values.iter().map(render_literal).collect();
        if !self.children.is_empty() {
            items.push(render_object(&self.children));
        }
        if items.len() == 1 {
            items.pop().unwrap_or_default()
        } else {
            format!("[{}]", items.join(", "))
        }
    }
}

fn render_object(members: &BTreeMap<String, ArgNode>) -> String {
    let inner: Vec<String> = members
        .iter()
        .map(|(k, node)| format!("{k}: {}", node.render()))
        .collect();
    format!("{{{}}}", inner.join(", "))
}

fn render_literal(value: &NormalizedValue) -> String {
    match value.style {
        LiteralStyle::Quoted => serde_json::to_string(&value.raw).unwrap_or_else(|_| "\"\"".into()),
        LiteralStyle::Bare => value.raw.clone(),
    }
}

#[derive(Default)]
struct SelNode {
    leaf: bool,
    children: BTreeMap<String, SelNode>,
}

fn render_selection(nodes: &BTreeMap<String, SelNode>) -> String {
    let mut parts = Vec::new();
    for (name, node) in nodes {
        if node.leaf {
            parts.push(name.clone());
        }
        if !node.children.is_empty() {
            parts.push(format!("{name} {}", render_selection(&node.children)));
        }
    }
    format!("{{ {} }}", parts.join(" "))
}

/// `query { resource(args) { fields } }` with arguments and fields in sorted order.
pub fn serialize_graphql(q: &CanonicalQuery) -> String {
    let mut args = ArgNode::default();
    for filter in q.filters.iter() {
        let path: Vec<&str> = filter.attribute.split('.').collect();
        for value in &filter.values {
            args.insert(&path, value);
        }
    }
    let arguments = if args.children.is_empty() {
        String::new()
    } else {
        let rendered = render_object(&args.children);
        format!("({})", &rendered[1..rendered.len() - 1])
    };

    let mut selection = SelNode::default();
    for path in &q.selection {
        let mut node = &mut selection;
        for part in path.split('.') {
            node = node.children.entry(part.to_string()).or_default();
        }
        node.leaf = true;
    }

    format!(
        "query {{ {}{} {} }}",
        q.resource,
        arguments,
        render_selection(&selection.children)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limit_example() {
        let q = parse_graphql("query { deals(limit: 10) { id } }").unwrap();
        assert_eq!(q.resource, "deals");
        assert_eq!(q.filters.len(), 1);
        assert_eq!(q.filters.get("limit").unwrap().canonical_values(), vec!["10"]);
        assert_eq!(q.selection, BTreeSet::from(["id".to_string()]));
        let text = serialize_graphql(&q);
        assert_eq!(text, "query { deals(limit: 10) { id } }");
        assert_eq!(parse_graphql(&text).unwrap(), q);
    }

    #[test]
    fn empty_selection() {
        assert_eq!(
            parse_graphql("query { deals { } }").unwrap_err(),
            QueryError::EmptySelection
        );
        assert_eq!(parse_graphql("query { }").unwrap_err(), QueryError::EmptySelection);
        assert_eq!(
            parse_graphql("query { deals(limit: 3) }").unwrap_err(),
            QueryError::EmptySelection
        );
    }

    #[test]
    fn multiple_operations() {
        assert_eq!(
            parse_graphql("query A { deals { id } } query B { deals { id } }").unwrap_err(),
            QueryError::MultipleOperations
        );
        assert_eq!(
            parse_graphql("{ deals { id } } { investors { id } }").unwrap_err(),
            QueryError::MultipleOperations
        );
    }

    #[test]
    fn nested_objects_and_lists_flatten() {
        let q = parse_graphql(
            r#"query Deals {
                deals(limit: 20, filters: {country_id: [104, 288], negotiation_status: CONTRACT_CANCELED,
                      area: {min: 1000.0}}, subset: PUBLIC) {
                  id
                  deal_size
                  country { id name }
                }
            }"#,
        )
        .unwrap();
        let attrs: Vec<&str> = q.filters.attributes().collect();
        assert_eq!(
            attrs,
            vec![
                "filters.area.min",
                "filters.country_id",
                "filters.negotiation_status",
                "limit",
                "subset"
            ]
        );
        assert_eq!(
            q.filters.get("filters.country_id").unwrap().canonical_values(),
            vec!["104", "288"]
        );
        assert_eq!(
            q.filters.get("filters.area.min").unwrap().canonical_values(),
            vec!["1000"]
        );
        let sel: Vec<&str> = q.selection.iter().map(String::as_str).collect();
        assert_eq!(sel, vec!["country.id", "country.name", "deal_size", "id"]);

        let again = parse_graphql(&serialize_graphql(&q)).unwrap();
        assert_eq!(again, q);
    }

    #[test]
    fn list_of_objects_merges_paths() {
        let q = parse_graphql(
            r#"{ deals(filters: [{field: "country.id", value: 4}, {field: "area", value: 200}]) { id } }"#,
        )
        .unwrap();
        assert_eq!(
            q.filters.get("filters.field").unwrap().canonical_values(),
            vec!["AREA", "country.id"]
        );
        let again = parse_graphql(&serialize_graphql(&q)).unwrap();
        assert_eq!(again, q);
    }

    #[test]
    fn mixed_scalar_and_object_list_round_trips() {
        let q = parse_graphql(r#"{ deals(a: [1, {b: 2}]) { id } }"#).unwrap();
        let again = parse_graphql(&serialize_graphql(&q)).unwrap();
        assert_eq!(again, q);
    }

    #[test]
    fn aliases_comments_strings() {
        let q = parse_graphql(
            "# recent deals\nquery {\n  d: deals(country: \"C\\u00f4te d'Ivoire\", note: \"\"\"multi\nline\"\"\") { i: id }\n}",
        )
        .unwrap();
        assert_eq!(q.resource, "deals");
        assert_eq!(
            q.filters.get("country").unwrap().canonical_values(),
            vec!["côte d'ivoire"]
        );
        assert!(q.selection.contains("id"));
        let again = parse_graphql(&serialize_graphql(&q)).unwrap();
        assert_eq!(again, q);
    }

    #[test]
    fn unsupported_features_are_syntax_errors() {
        for text in [
            "query ($n: Int) { deals(limit: $n) { id } }",
            "query { deals { ...F } }",
            "fragment F on Deal { id }",
            "mutation { deleteDeal(id: 1) { id } }",
            "query { deals @include(if: true) { id } }",
            "query { deals(limit: ) { id } }",
            "query { deals { id }",
            "query { deals(limit: 1x) { id } }",
            "",
        ] {
            assert!(
                matches!(parse_graphql(text), Err(QueryError::Syntax { .. })),
                "expected syntax error for {text:?}"
            );
        }
    }

    #[test]
    fn syntax_error_reports_offset() {
        match parse_graphql("query { deals(limit: ?) { id } }") {
            Err(QueryError::Syntax { offset, .. }) => assert_eq!(offset, 21),
            other => panic!("unexpected {other:?}"),
        }
    }
}
