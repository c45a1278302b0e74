use std::io;
use std::path::Path;

/// Names recognised inside `{...}`; any other braces are copied verbatim.
pub const PLACEHOLDERS: [&str; 6] = ["question", "schema", "rules", "examples", "values_fragment", "dialect"];

/// Prompt wording, one text file per template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub instruction: String,
    pub context: String,
    pub agent1_instruction: String,
    pub agent1_context: String,
    pub agent2_context: String,
}

const FILES: [&str; 5] = [
    "instruction.txt",
    "context.txt",
    "agent1_instruction.txt",
    "agent1_context.txt",
    "agent2_context.txt",
];

impl Default for Templates {
    fn default() -> Self {
        Self {
            instruction: include_str!("../../templates/instruction.txt").to_string(),
            context: include_str!("../../templates/context.txt").to_string(),
            agent1_instruction: include_str!("../../templates/agent1_instruction.txt").to_string(),
            agent1_context: include_str!("../../templates/agent1_context.txt").to_string(),
            agent2_context: include_str!("../../templates/agent2_context.txt").to_string(),
        }
    }
}

impl Templates {
    /// Built-in templates, overridden by any same-named file present in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        let mut templates = Self::default();
        for name in FILES {
            let path = dir.join(name);
            if path.is_file() {
                *templates.slot(name) = std::fs::read_to_string(&path)?;
            }
        }
        Ok(templates)
    }

    fn slot(&mut self, file: &str) -> &mut String {
        match file {
            "instruction.txt" => &mut self.instruction,
            "context.txt" => &mut self.context,
            "agent1_instruction.txt" => &mut self.agent1_instruction,
            "agent1_context.txt" => &mut self.agent1_context,
            _ => &mut self.agent2_context,
        }
    }
}

/// Single-pass `{name}` substitution; substituted text is never rescanned.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name && PLACEHOLDERS.contains(k))
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_is_single_pass() {
        let out = render_template(
            "Q: {question}\nE: {examples} {unknown} {",
            &[("question", "{examples}"), ("examples", "query { deals { id } }")],
        );
        assert_eq!(out, "Q: {examples}\nE: query { deals { id } } {unknown} {");
    }

    #[test]
    fn directory_overrides_single_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("instruction.txt"), "Be a {dialect} expert.").unwrap();
        let t = Templates::load_dir(dir.path()).unwrap();
        assert_eq!(t.instruction, "Be a {dialect} expert.");
        assert_eq!(t.context, Templates::default().context);
    }
}
