//! Agent 1: filter extraction and value resolution for the two-agent pipeline.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::templates::{render_template, Templates};
use super::{describe_attribute, PromptBundle};
use crate::corpus::AttributeVocabulary;
use crate::llm::{ChatRequest, Gateway, GatewayError};
use crate::query::Dialect;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityBinding {
    pub entity: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOneOutput {
    pub prompt: PromptBundle,
    pub raw: String,
    pub bindings: Vec<EntityBinding>,
    pub warnings: Vec<String>,
}

static BRACKET_PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\s*([A-Za-z_][A-Za-z0-9_ .\-]*?)\s*:\s*([^\[\]\n]*?)\s*\]").unwrap_or_else(|e| panic!("{e}"))
});

pub fn agent_one_prompt(
    question: &str,
    vocab: &AttributeVocabulary,
    templates: &Templates,
    dialect: Dialect,
) -> PromptBundle {
    let listing = vocab
        .iter()
        .map(|(name, spec)| {
            if spec.description.is_empty() {
                format!("- {name}")
            } else {
                format!("- {name}: {}", spec.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let vars = [
        ("question", question),
        ("values_fragment", listing.as_str()),
        ("dialect", dialect.label()),
    ];
    PromptBundle {
        instruction: render_template(&templates.agent1_instruction, &vars),
        context: render_template(&templates.agent1_context, &vars),
        question: question.to_string(),
        dialect,
    }
}

/// Ask agent 1 for `[entity: value]` pairs and keep those naming a known attribute.
pub async fn extract_entities(
    question: &str,
    vocab: &AttributeVocabulary,
    gateway: &Gateway,
    model: &str,
    templates: &Templates,
    dialect: Dialect,
) -> Result<AgentOneOutput, GatewayError> {
    let prompt = agent_one_prompt(question, vocab, templates, dialect);
    let response = gateway.complete(&ChatRequest::new(model, prompt.messages())).await?;
    let (parsed, parse_warning) = parse_bindings(&response.text);
    let (bindings, mut warnings) = screen_bindings(parsed, vocab);
    warnings.extend(parse_warning);
    Ok(AgentOneOutput {
        prompt,
        raw: response.text,
        bindings,
        warnings,
    })
}

/// Parse `[entity: value]` pairs, falling back to a JSON object or list of pairs.
///
/// Returns a warning when non-empty output yields no pair at all.
pub fn parse_bindings(raw: &str) -> (Vec<EntityBinding>, Option<String>) {
    let mut bindings: Vec<EntityBinding> = BRACKET_PAIR
        .captures_iter(raw)
        .filter_map(|c| binding(&c[1], &c[2]))
        .collect();
    if bindings.is_empty() {
        bindings = parse_json_bindings(raw);
    }
    let warning = (bindings.is_empty() && !raw.trim().is_empty() && !is_explicit_none(raw)).then(|| {
        format!(
            "ParseWarning: no [entity: value] pair in agent-1 output {:?}",
            truncate(raw, 80)
        )
    });
    (bindings, warning)
}

fn is_explicit_none(raw: &str) -> bool {
    let t = raw
        .trim()
        .trim_matches(|c: char| c == '.' || c == '"' || c == '[' || c == ']');
    t.eq_ignore_ascii_case("none")
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn binding(entity: &str, value: &str) -> Option<EntityBinding> {
    let entity = entity.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`');
    let value = value.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`');
    (!entity.is_empty() && !value.is_empty()).then(|| EntityBinding {
        entity: entity.to_ascii_lowercase().replace(' ', "_"),
        value: value.to_string(),
    })
}

fn parse_json_bindings(raw: &str) -> Vec<EntityBinding> {
    let Some(start) = raw.find(['{', '[']) else {
        return Vec::new();
    };
    let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<serde_json::Value>();
    let Some(Ok(value)) = stream.next() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    collect_json_pairs(&value, &mut out);
    out
}

fn collect_json_pairs(value: &serde_json::Value, out: &mut Vec<EntityBinding>) {
    use serde_json::Value;
    match value {
        Value::Array(items) => items.iter().for_each(|v| collect_json_pairs(v, out)),
        Value::Object(map) => {
            if let (Some(e), Some(v)) = (map.get("entity"), map.get("value")) {
                out.extend(binding(&scalar(e), &scalar(v)));
                return;
            }
            for (k, v) in map {
                match v {
                    Value::Array(_) | Value::Object(_) => collect_json_pairs(v, out),
                    Value::Null => {}
                    _ => out.extend(binding(k, &scalar(v))),
                }
            }
        }
        _ => {}
    }
}

fn scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Drop bindings whose entity is not in the vocabulary; rename the rest to the vocabulary key.
pub fn screen_bindings(bindings: Vec<EntityBinding>, vocab: &AttributeVocabulary) -> (Vec<EntityBinding>, Vec<String>) {
    let mut kept = Vec::new();
    let mut warnings = Vec::new();
    for b in bindings {
        match vocab.resolve(&b.entity) {
            Some((name, _)) => kept.push(EntityBinding {
                entity: name.to_string(),
                value: b.value,
            }),
            None => warnings.push(format!(
                "dropped binding [{}: {}]: unknown attribute",
                b.entity, b.value
            )),
        }
    }
    (kept, warnings)
}

/// Describe each bound attribute once: value list for enumerated ones, description otherwise.
pub fn resolve_entity_values(bindings: &[EntityBinding], vocab: &AttributeVocabulary) -> String {
    let bound: BTreeMap<&str, _> = bindings.iter().filter_map(|b| vocab.resolve(&b.entity)).collect();
    bound
        .into_iter()
        .map(|(name, spec)| describe_attribute(name, spec))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_vocabulary;

    fn vocab() -> AttributeVocabulary {
        parse_vocabulary(
            r#"{
                "country": {"value_kind": "identifier", "description": "Target country"},
                "area_min": {"value_kind": "numeric", "description": "Minimum deal size in hectares"},
                "negotiation_status": {"value_kind": "enumerated", "description": "Negotiation status",
                    "allowed_values": ["EXPRESSION_OF_INTEREST", "ORAL_AGREEMENT", "CONTRACT_SIGNED", "CONTRACT_CANCELED"]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn bracket_lines() {
        let (b, w) = parse_bindings("[country: Madagascar]\n[area_min: 5000]");
        assert_eq!(b.len(), 2);
        assert_eq!(
            b[0],
            EntityBinding {
                entity: "country".into(),
                value: "Madagascar".into()
            }
        );
        assert_eq!(b[1].value, "5000");
        assert!(w.is_none());
    }

    #[test]
    fn unparseable_output_warns() {
        let (b, w) = parse_bindings("no entities");
        assert!(b.is_empty());
        assert!(w.unwrap().starts_with("ParseWarning"));
        let (b, w) = parse_bindings("none");
        assert!(b.is_empty() && w.is_none());
    }

    #[test]
    fn json_fallback() {
        let (b, _) = parse_bindings(r#"Sure: {"country": "Ghana", "area_min": 200}"#);
        assert_eq!(
            b,
            vec![
                EntityBinding {
                    entity: "area_min".into(),
                    value: "200".into()
                },
                EntityBinding {
                    entity: "country".into(),
                    value: "Ghana".into()
                },
            ]
        );
        let (b, _) = parse_bindings(r#"[{"entity": "country", "value": "Mali"}]"#);
        assert_eq!(b[0].value, "Mali");
    }

    #[test]
    fn vocabulary_screen() {
        let (b, _) = parse_bindings("[weather: sunny]\n[Country: Peru]");
        let (kept, warnings) = screen_bindings(b, &vocab());
        assert_eq!(
            kept,
            vec![EntityBinding {
                entity: "country".into(),
                value: "Peru".into()
            }]
        );
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("weather"));
    }

    #[test]
    fn resolution_by_kind() {
        let v = vocab();
        let status = resolve_entity_values(
            &[EntityBinding {
                entity: "negotiation_status".into(),
                value: "canceled".into(),
            }],
            &v,
        );
        assert!(status.contains("CONTRACT_CANCELED") && status.contains("ORAL_AGREEMENT"));
        assert_eq!(resolve_entity_values(&[], &v), "");
        let area = resolve_entity_values(
            &[EntityBinding {
                entity: "area_min".into(),
                value: "5000".into(),
            }],
            &v,
        );
        assert_eq!(area, "- area_min (numeric): Minimum deal size in hectares");
    }
}
