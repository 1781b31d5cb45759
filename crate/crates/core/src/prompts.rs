//! Versioned prompt templates and the parsers for their reply grammars.
//!
//! Templates are plain text with `{{placeholder}}` slots. A template's id is
//! its name plus a short digest of its text, so editing a template changes
//! every cache key derived from it.
//!
//! | template            | reply grammar                                        |
//! |---------------------|------------------------------------------------------|
//! | `summarize`         | free text, at most two sentences kept                |
//! | `classify`          | first non-empty line is one label                    |
//! | `induce_dimensions` | fenced JSON list of `{name, description, values}`    |
//! | `induce_values`     | fenced JSON list of value tokens                     |
//! | `suggest_names`     | fenced JSON list of `{name, description}`            |
//! | `gm_turn`           | free text                                            |
//! | `player_turn`       | free text                                            |
//! | `rule_check`        | `TRIGGERED` or `NOT_TRIGGERED`, then a rationale     |

use std::collections::BTreeSet;
use std::sync::OnceLock;

use thiserror::Error;

use crate::hash::sha256_hex;

#[derive(Debug, Clone)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template} needs placeholder {{{{{name}}}}}")]
    Missing { template: &'static str, name: String },
    #[error("template {template} has no placeholder {{{{{name}}}}}")]
    Unknown { template: &'static str, name: String },
}

impl Template {
    fn new(name: &'static str, text: &'static str) -> Self {
        Self {
            name,
            text,
            id: format!("{name}@{}", &sha256_hex(text)[..12]),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        let mut out = BTreeSet::new();
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    out.insert(&after[..end]);
                    rest = &after[end + 2..];
                }
                None => break,
            }
        }
        out
    }

    /// Fills every placeholder; all of them must be supplied and no others.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let wanted = self.placeholders();
        for (k, _) in values {
            if !wanted.contains(k) {
                return Err(PromptError::Unknown {
                    template: self.name,
                    name: k.to_string(),
                });
            }
        }
        for name in &wanted {
            if !values.iter().any(|(k, _)| k == name) {
                return Err(PromptError::Missing {
                    template: self.name,
                    name: name.to_string(),
                });
            }
        }
        // single pass, so substituted text is never re-scanned
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            let name = &after[..end];
            let value = values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or_default();
            out.push_str(&rest[..start]);
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub struct Templates {
    pub summarize: Template,
    pub classify: Template,
    pub induce_dimensions: Template,
    pub induce_values: Template,
    pub suggest_names: Template,
    pub gm_turn: Template,
    pub player_turn: Template,
    pub rule_check: Template,
}

pub fn templates() -> &'static Templates {
    static T: OnceLock<Templates> = OnceLock::new();
    T.get_or_init(|| Templates {
        summarize: Template::new("summarize", include_str!("../prompts/summarize.txt")),
        classify: Template::new("classify", include_str!("../prompts/classify.txt")),
        induce_dimensions: Template::new("induce_dimensions", include_str!("../prompts/induce_dimensions.txt")),
        induce_values: Template::new("induce_values", include_str!("../prompts/induce_values.txt")),
        suggest_names: Template::new("suggest_names", include_str!("../prompts/suggest_names.txt")),
        gm_turn: Template::new("gm_turn", include_str!("../prompts/gm_turn.txt")),
        player_turn: Template::new("player_turn", include_str!("../prompts/player_turn.txt")),
        rule_check: Template::new("rule_check", include_str!("../prompts/rule_check.txt")),
    })
}

/// Body of the first fenced block, or the whole reply when it has none.
pub fn fenced_block(reply: &str) -> &str {
    let Some(open) = reply.find("```") else {
        return reply.trim();
    };
    let after = &reply[open + 3..];
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

/// First non-empty line with surrounding quotes, backticks and a trailing
/// period removed.
pub fn first_line_token(reply: &str) -> Option<&str> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
    let token = line
        .trim_matches(|c: char| "\"'`*.".contains(c))
        .trim();
    (!token.is_empty()).then_some(token)
}

/// Keeps at most the first two sentences.
pub fn clamp_sentences(text: &str, max: usize) -> String {
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut count = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let at_end = chars.get(i + 1).is_none_or(|&(_, n)| n == ' ');
            if at_end {
                count += 1;
                if count == max {
                    return text[..pos + c.len_utf8()].to_string();
                }
            }
        }
    }
    text
}
