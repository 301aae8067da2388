//! Placeholder-substitution templates and the built-in registry.
//!
//! Templates are plain text with `${persona}`, `${previous_responses}` and
//! `${task}` placeholders. Rendering is pure substitution; there is no
//! conditional logic. The built-in registry ships the persona, combination
//! and moderator templates used throughout the crate; their bodies live as
//! files next to this module and are frozen by golden tests.
//!
//! Placeholder rules per kind:
//!
//! - `persona` templates contain `${persona}` exactly once and nothing else;
//! - `combination` and `moderator` templates contain `${previous_responses}`
//!   at least once, may use `${task}`, and never `${persona}`.
//!
//! These rules guarantee that every placeholder in a well-kinded template
//! has a binding available at the point the engine renders it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Persona,
    Combination,
    Moderator,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateKind::Persona => write!(f, "persona"),
            TemplateKind::Combination => write!(f, "combination"),
            TemplateKind::Moderator => write!(f, "moderator"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Placeholder {
    Persona,
    PreviousResponses,
    Task,
}

impl Placeholder {
    pub fn token(&self) -> &'static str {
        match self {
            Placeholder::Persona => "${persona}",
            Placeholder::PreviousResponses => "${previous_responses}",
            Placeholder::Task => "${task}",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "persona" => Some(Placeholder::Persona),
            "previous_responses" => Some(Placeholder::PreviousResponses),
            "task" => Some(Placeholder::Task),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub kind: TemplateKind,
    pub body: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("unknown placeholder ${{{0}}} in template {1:?}")]
    UnknownPlaceholder(String, String),
    #[error(
        "template {name:?} ({kind}) must contain {token} {expected}, found {found} occurrence(s)"
    )]
    PlaceholderCount {
        name: String,
        kind: TemplateKind,
        token: &'static str,
        expected: &'static str,
        found: usize,
    },
    #[error("template {name:?} ({kind}) may not use {token}")]
    PlaceholderForbidden {
        name: String,
        kind: TemplateKind,
        token: &'static str,
    },
    #[error("no binding for {0} required by template {1:?}")]
    MissingBinding(&'static str, String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
}

/// Scan `${...}` tokens. Returns (placeholder, count) pairs or the first
/// unknown token name.
fn scan_placeholders(body: &str) -> Result<BTreeMap<Placeholder, usize>, String> {
    let mut counts = BTreeMap::new();
    let mut rest = body;
    while let Some(start) = rest.find("${") {
        let tail = &rest[start + 2..];
        match tail.find('}') {
            Some(end) => {
                let name = &tail[..end];
                match Placeholder::from_name(name) {
                    Some(p) => *counts.entry(p).or_insert(0) += 1,
                    None => return Err(name.to_string()),
                }
                rest = &tail[end + 1..];
            }
            // Unterminated "${" is treated as literal text.
            None => break,
        }
    }
    Ok(counts)
}

impl Template {
    /// Build and validate a template against its kind's placeholder rules.
    pub fn new(
        name: impl Into<String>,
        kind: TemplateKind,
        body: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let counts = scan_placeholders(&body)
            .map_err(|tok| TemplateError::UnknownPlaceholder(tok, name.clone()))?;
        let count = |p: Placeholder| counts.get(&p).copied().unwrap_or(0);
        match kind {
            TemplateKind::Persona => {
                if count(Placeholder::Persona) != 1 {
                    return Err(TemplateError::PlaceholderCount {
                        name,
                        kind,
                        token: Placeholder::Persona.token(),
                        expected: "exactly once",
                        found: count(Placeholder::Persona),
                    });
                }
                for p in [Placeholder::PreviousResponses, Placeholder::Task] {
                    if count(p) > 0 {
                        return Err(TemplateError::PlaceholderForbidden {
                            name,
                            kind,
                            token: p.token(),
                        });
                    }
                }
            }
            TemplateKind::Combination | TemplateKind::Moderator => {
                if count(Placeholder::PreviousResponses) == 0 {
                    return Err(TemplateError::PlaceholderCount {
                        name,
                        kind,
                        token: Placeholder::PreviousResponses.token(),
                        expected: "at least once",
                        found: 0,
                    });
                }
                if count(Placeholder::Persona) > 0 {
                    return Err(TemplateError::PlaceholderForbidden {
                        name,
                        kind,
                        token: Placeholder::Persona.token(),
                    });
                }
            }
        }
        Ok(Template { name, kind, body })
    }

    pub fn placeholders(&self) -> Vec<Placeholder> {
        scan_placeholders(&self.body)
            .expect("validated at construction")
            .into_keys()
            .collect()
    }

    pub fn uses(&self, p: Placeholder) -> bool {
        self.placeholders().contains(&p)
    }
}

/// Values substituted into a template. Every placeholder present in the
/// template must have a non-absent binding.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    pub persona: Option<String>,
    pub previous_responses: Option<String>,
    pub task: Option<String>,
}

impl Binding {
    fn get(&self, p: Placeholder) -> Option<&str> {
        match p {
            Placeholder::Persona => self.persona.as_deref(),
            Placeholder::PreviousResponses => self.previous_responses.as_deref(),
            Placeholder::Task => self.task.as_deref(),
        }
    }
}

/// Pure textual substitution. Output never contains a `${...}` token.
pub fn render(template: &Template, binding: &Binding) -> Result<String, TemplateError> {
    let mut out = template.body.clone();
    for p in template.placeholders() {
        let value = binding
            .get(p)
            .ok_or_else(|| TemplateError::MissingBinding(p.token(), template.name.clone()))?;
        out = out.replace(p.token(), value);
    }
    Ok(out)
}

/// Format prior turns for injection into `${previous_responses}`.
///
/// One paragraph per turn, chronological: `Response N ([tag]): text`, or
/// `Response N: text` for untagged turns. Empty input yields an empty block.
pub fn format_previous_responses(turns: &[(Option<&str>, &str)]) -> String {
    turns
        .iter()
        .enumerate()
        .map(|(i, (tag, text))| match tag {
            Some(tag) => format!("Response {} ([{}]): {}", i + 1, tag, text),
            None => format!("Response {}: {}", i + 1, text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

struct BuiltinSource {
    name: &'static str,
    raw: &'static str,
}

/// Raw builtin files. Each starts with `#`-prefixed header lines (kind and
/// origin) followed by a `---` separator and the body.
const BUILTIN_SOURCES: &[BuiltinSource] = &[
    BuiltinSource {
        name: "anes_persona",
        raw: include_str!("builtin/anes_persona.txt"),
    },
    BuiltinSource {
        name: "first_wave_persona",
        raw: include_str!("builtin/first_wave_persona.txt"),
    },
    BuiltinSource {
        name: "second_wave_persona",
        raw: include_str!("builtin/second_wave_persona.txt"),
    },
    BuiltinSource {
        name: "default",
        raw: include_str!("builtin/default.txt"),
    },
    BuiltinSource {
        name: "critique_revise",
        raw: include_str!("builtin/critique_revise.txt"),
    },
    BuiltinSource {
        name: "rational_debate",
        raw: include_str!("builtin/rational_debate.txt"),
    },
    BuiltinSource {
        name: "emotional_debate",
        raw: include_str!("builtin/emotional_debate.txt"),
    },
    BuiltinSource {
        name: "synthesizer",
        raw: include_str!("builtin/synthesizer.txt"),
    },
    BuiltinSource {
        name: "information_aggregator",
        raw: include_str!("builtin/information_aggregator.txt"),
    },
    BuiltinSource {
        name: "divergent_moderator",
        raw: include_str!("builtin/divergent_moderator.txt"),
    },
];

/// Parse one builtin file: header lines, `---`, body. The body keeps its
/// bytes exactly, minus the single trailing newline the file format requires.
fn parse_builtin(name: &str, raw: &str) -> Template {
    let mut kind = None;
    let mut lines = raw.lines();
    for line in lines.by_ref() {
        if line == "---" {
            break;
        }
        if let Some(value) = line.strip_prefix("# kind:") {
            kind = Some(match value.trim() {
                "persona" => TemplateKind::Persona,
                "combination" => TemplateKind::Combination,
                "moderator" => TemplateKind::Moderator,
                other => panic!("builtin {name}: unknown kind {other:?}"),
            });
        }
    }
    let kind = kind.unwrap_or_else(|| panic!("builtin {name}: missing '# kind:' header"));
    let sep = raw
        .find("\n---\n")
        .unwrap_or_else(|| panic!("builtin {name}: missing '---' separator"));
    let body = &raw[sep + 5..];
    let body = body.strip_suffix('\n').unwrap_or(body);
    Template::new(name, kind, body)
        .unwrap_or_else(|e| panic!("builtin {name} failed validation: {e}"))
}

fn registry() -> &'static BTreeMap<&'static str, Template> {
    static REGISTRY: OnceLock<BTreeMap<&'static str, Template>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        BUILTIN_SOURCES
            .iter()
            .map(|s| (s.name, parse_builtin(s.name, s.raw)))
            .collect()
    })
}

/// Look up a built-in template by name.
pub fn builtin(name: &str) -> Result<&'static Template, TemplateError> {
    registry()
        .get(name)
        .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
}

pub fn builtin_names() -> Vec<&'static str> {
    registry().keys().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_is_plain() {
        let t = Template::new("t", TemplateKind::Persona, "X ${persona} Y").unwrap();
        let b = Binding {
            persona: Some("P".into()),
            ..Binding::default()
        };
        assert_eq!(render(&t, &b).unwrap(), "X P Y");
    }

    #[test]
    fn missing_binding_is_an_error() {
        let t = Template::new("c", TemplateKind::Combination, "see ${previous_responses}").unwrap();
        let err = render(&t, &Binding::default()).unwrap_err();
        assert!(matches!(
            err,
            TemplateError::MissingBinding("${previous_responses}", _)
        ));
    }

    #[test]
    fn unknown_placeholder_rejected_at_construction() {
        let err = Template::new("bad", TemplateKind::Persona, "${persona} ${oops}").unwrap_err();
        assert!(matches!(err, TemplateError::UnknownPlaceholder(t, _) if t == "oops"));
    }

    #[test]
    fn kind_rules() {
        // persona: exactly one ${persona}
        assert!(Template::new("p", TemplateKind::Persona, "no placeholder").is_err());
        assert!(Template::new("p", TemplateKind::Persona, "${persona} ${persona}").is_err());
        assert!(Template::new("p", TemplateKind::Persona, "${persona} ${task}").is_err());
        // combination: at least one ${previous_responses}, no ${persona}
        assert!(Template::new("c", TemplateKind::Combination, "no block").is_err());
        assert!(Template::new(
            "c",
            TemplateKind::Combination,
            "${previous_responses} ${persona}"
        )
        .is_err());
        assert!(Template::new(
            "c",
            TemplateKind::Combination,
            "${previous_responses} then ${task}"
        )
        .is_ok());
        // moderator mirrors combination
        assert!(Template::new(
            "m",
            TemplateKind::Moderator,
            "${task}\n${previous_responses}"
        )
        .is_ok());
    }

    #[test]
    fn render_leaves_no_tokens() {
        for name in builtin_names() {
            let t = builtin(name).unwrap();
            let b = Binding {
                persona: Some("someone".into()),
                previous_responses: Some("Response 1: hello".into()),
                task: Some("the task".into()),
            };
            let out = render(t, &b).unwrap();
            assert!(!out.contains("${"), "{name} left a placeholder: {out}");
        }
    }

    #[test]
    fn previous_responses_formats() {
        assert_eq!(format_previous_responses(&[]), "");
        assert_eq!(
            format_previous_responses(&[(Some("You"), "a"), (Some("Other"), "b")]),
            "Response 1 ([You]): a\nResponse 2 ([Other]): b"
        );
        assert_eq!(
            format_previous_responses(&[(None, "x"), (None, "y"), (None, "z")]),
            "Response 1: x\nResponse 2: y\nResponse 3: z"
        );
    }

    #[test]
    fn registry_is_stable() {
        let a = builtin("rational_debate").unwrap();
        let b = builtin("rational_debate").unwrap();
        assert_eq!(a.body, b.body);
        assert!(builtin("bogus").is_err());
    }

    #[test]
    fn registry_contents() {
        assert_eq!(
            builtin_names(),
            vec![
                "anes_persona",
                "critique_revise",
                "default",
                "divergent_moderator",
                "emotional_debate",
                "first_wave_persona",
                "information_aggregator",
                "rational_debate",
                "second_wave_persona",
                "synthesizer",
            ]
        );
        assert_eq!(builtin("anes_persona").unwrap().kind, TemplateKind::Persona);
        assert_eq!(builtin("default").unwrap().kind, TemplateKind::Combination);
        assert_eq!(
            builtin("synthesizer").unwrap().kind,
            TemplateKind::Moderator
        );
    }

    #[test]
    fn debate_bodies_carry_key_instructions() {
        let rational = builtin("rational_debate").unwrap();
        assert!(rational
            .body
            .contains("Give more weight to rational arguments rather than emotional ones."));
        assert!(rational
            .body
            .contains("Never refer to yourself in the third person."));
        let emotional = builtin("emotional_debate").unwrap();
        assert!(emotional
            .body
            .contains("such as narrative, rhetoric, testimony, and storytelling"));
    }
}
