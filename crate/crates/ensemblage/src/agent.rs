//! Agents: assemble system instructions and a user prompt from a profile,
//! a task, combination instructions and visible prior responses, then
//! execute one turn against a backend.
//!
//! The central contract is the visibility rule: combination instructions
//! (and their `<start>`/`<end>` history block) appear in a prompt if and
//! only if prior responses are in the agent's view. With nothing visible,
//! the prompt is exactly the task.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ModelRequest};
use crate::error::EngineError;
use crate::persona::{render_persona, PersonaDataset, PersonaQuery};
use crate::rng::SeededRng;
use crate::template::{
    builtin, format_previous_responses, render, Binding, Placeholder, Template, TemplateKind,
};

/// Where a persona's specific identity text comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaSource {
    /// Caller-provided text, e.g. "a graphic designer".
    Direct(String),
    /// Weighted draw from the rows matching a textual query.
    Query(String),
    /// Weighted draw from rows matching an ideology label.
    Ideology(String),
    /// Weighted draw from the whole dataset.
    Random,
}

/// A template referenced by built-in name or supplied inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateRef {
    Builtin(String),
    Inline(Template),
}

impl TemplateRef {
    pub fn resolve(&self) -> Result<Template, EngineError> {
        match self {
            TemplateRef::Builtin(name) => Ok(builtin(name)?.clone()),
            TemplateRef::Inline(t) => {
                // Inline templates re-validate so deserialized bodies obey
                // the placeholder rules.
                Ok(Template::new(t.name.clone(), t.kind, t.body.clone())?)
            }
        }
    }
}

/// An agent's profile: what becomes its system instructions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpec {
    /// No system instructions; default model behavior.
    #[default]
    None,
    /// Verbatim system instructions.
    Direct(String),
    /// A persona (from text or a dataset draw) inlined into a persona
    /// template's `${persona}` slot.
    Persona {
        source: PersonaSource,
        template: TemplateRef,
    },
}

/// One deliberating entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    #[serde(default)]
    pub profile: ProfileSpec,
    /// Per-agent task; inherits the structure task when absent.
    #[serde(default)]
    pub task: Option<String>,
    /// Must resolve to a combination-kind template.
    #[serde(default = "default_combination")]
    pub combination_instructions: TemplateRef,
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

fn default_combination() -> TemplateRef {
    TemplateRef::Builtin("default".to_string())
}

impl AgentSpec {
    pub fn new(id: impl Into<String>, model_id: impl Into<String>) -> Self {
        AgentSpec {
            id: id.into(),
            profile: ProfileSpec::None,
            task: None,
            combination_instructions: default_combination(),
            model_id: model_id.into(),
            temperature: None,
            max_tokens: None,
        }
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    pub fn with_profile(mut self, profile: ProfileSpec) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_combination(mut self, reference: TemplateRef) -> Self {
        self.combination_instructions = reference;
        self
    }

    /// The combination template, checked to be combination-kind.
    pub fn resolve_combination(&self) -> Result<Template, EngineError> {
        let t = self.combination_instructions.resolve()?;
        if t.kind != TemplateKind::Combination {
            return Err(EngineError::InvalidConfig(format!(
                "agent {:?}: combination_instructions resolves to a {} template",
                self.id, t.kind
            )));
        }
        Ok(t)
    }
}

/// What kind of completion a trace turn records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Agent,
    Moderator,
    /// The auto-moderator's bootstrap call that writes its own instructions.
    ModeratorMeta,
    /// A steerable-moderation accept/reject check.
    Gate,
}

/// Exactly what one turn sent and received. The audit unit of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub id: String,
    pub kind: TurnKind,
    pub agent_id: String,
    pub cycle_index: u32,
    pub system_instructions_sent: Option<String>,
    pub user_prompt_sent: String,
    /// Ids of the prior turns whose responses were in this turn's view.
    pub visible_turn_ids: Vec<String>,
    pub response_text: String,
    pub model_id: String,
    pub timestamp_ms: u64,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// A prior response as shown to an agent: the structure decides the
/// speaker tag (e.g. `[You]`/`[Other]` in debates) and may rewrite the text
/// (custom structures).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub turn_id: String,
    pub speaker_tag: Option<String>,
    pub text: String,
}

impl HistoryEntry {
    pub fn from_turn(turn: &TurnRecord) -> Self {
        HistoryEntry {
            turn_id: turn.id.clone(),
            speaker_tag: None,
            text: turn.response_text.clone(),
        }
    }

    pub fn tagged(turn: &TurnRecord, tag: impl Into<String>) -> Self {
        HistoryEntry {
            turn_id: turn.id.clone(),
            speaker_tag: Some(tag.into()),
            text: turn.response_text.clone(),
        }
    }
}

/// Resolve a profile into system instructions.
///
/// `Direct` text passes through verbatim. Persona profiles render the
/// persona (sampled or direct) into the persona template's `${persona}`
/// slot. `None` yields no system instructions.
pub fn resolve_profile(
    spec: &AgentSpec,
    dataset: Option<&PersonaDataset>,
    rng: &mut SeededRng,
) -> Result<Option<String>, EngineError> {
    match &spec.profile {
        ProfileSpec::None => Ok(None),
        ProfileSpec::Direct(text) => Ok(Some(text.clone())),
        ProfileSpec::Persona { source, template } => {
            let template = template.resolve()?;
            if template.kind != TemplateKind::Persona {
                return Err(EngineError::InvalidConfig(format!(
                    "agent {:?}: persona profile uses a {} template",
                    spec.id, template.kind
                )));
            }
            let persona_text = match source {
                PersonaSource::Direct(text) => text.clone(),
                PersonaSource::Query(query_text) => {
                    let dataset =
                        dataset.ok_or_else(|| EngineError::MissingDataset(spec.id.clone()))?;
                    let query = PersonaQuery::parse(query_text)?;
                    let subset = dataset.filter(&query)?;
                    let record = subset.sample_weighted(rng)?.clone();
                    render_persona(&record, &dataset.codebook)?
                }
                PersonaSource::Ideology(label) => {
                    let dataset =
                        dataset.ok_or_else(|| EngineError::MissingDataset(spec.id.clone()))?;
                    let record = dataset.ideology_shortcut(label, rng)?;
                    render_persona(&record, &dataset.codebook)?
                }
                PersonaSource::Random => {
                    let dataset =
                        dataset.ok_or_else(|| EngineError::MissingDataset(spec.id.clone()))?;
                    let record = dataset.sample_weighted(rng)?.clone();
                    render_persona(&record, &dataset.codebook)?
                }
            };
            let rendered = render(
                &template,
                &Binding {
                    persona: Some(persona_text),
                    ..Binding::default()
                },
            )?;
            Ok(Some(rendered))
        }
    }
}

/// Assemble the user prompt.
///
/// No visible turns: the prompt is exactly the task. Otherwise the
/// combination template is rendered with the formatted history block (and
/// the task, when the template interpolates `${task}`); a template that
/// does not interpolate the task gets it appended after one blank line.
pub fn build_prompt(
    combination: &Template,
    task: &str,
    visible: &[HistoryEntry],
) -> Result<String, EngineError> {
    if visible.is_empty() {
        return Ok(task.to_string());
    }
    let pairs: Vec<(Option<&str>, &str)> = visible
        .iter()
        .map(|e| (e.speaker_tag.as_deref(), e.text.as_str()))
        .collect();
    let block = format_previous_responses(&pairs);
    let binding = Binding {
        previous_responses: Some(block),
        task: Some(task.to_string()),
        ..Binding::default()
    };
    let rendered = render(combination, &binding)?;
    if combination.uses(Placeholder::Task) {
        Ok(rendered)
    } else {
        Ok(format!("{rendered}\n\n{task}"))
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Execute one turn: build the prompt, make exactly one completion, and
/// record precisely the strings sent and received.
#[allow(clippy::too_many_arguments)]
pub fn take_turn(
    spec: &AgentSpec,
    system_instructions: Option<&str>,
    task: &str,
    visible: &[HistoryEntry],
    backend: &dyn Backend,
    cycle_index: u32,
    turn_id: &str,
) -> Result<TurnRecord, EngineError> {
    let combination = spec.resolve_combination()?;
    let prompt = build_prompt(&combination, task, visible)?;
    let mut request = ModelRequest::new(&spec.model_id, &prompt);
    request.system_instructions = system_instructions.map(|s| s.to_string());
    request.temperature = spec.temperature;
    request.max_tokens = spec.max_tokens;
    let response = backend
        .complete(&request)
        .map_err(|e| EngineError::for_agent(&spec.id, e))?;
    Ok(TurnRecord {
        id: turn_id.to_string(),
        kind: TurnKind::Agent,
        agent_id: spec.id.clone(),
        cycle_index,
        system_instructions_sent: request.system_instructions,
        user_prompt_sent: prompt,
        visible_turn_ids: visible.iter().map(|e| e.turn_id.clone()).collect(),
        response_text: response.text,
        model_id: response.model_id,
        timestamp_ms: now_ms(),
        latency_ms: response.latency.as_millis() as u64,
        attempt_count: response.attempt_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn entry(id: &str, text: &str) -> HistoryEntry {
        HistoryEntry {
            turn_id: id.into(),
            speaker_tag: None,
            text: text.into(),
        }
    }

    #[test]
    fn empty_visibility_means_bare_task() {
        let combination = builtin("default").unwrap();
        let prompt = build_prompt(combination, "do the thing", &[]).unwrap();
        assert_eq!(prompt, "do the thing");
        assert!(!prompt.contains("<start>"));
    }

    #[test]
    fn visible_turns_bring_combination_block() {
        let combination = builtin("default").unwrap();
        let visible = vec![entry("t0", "first answer"), entry("t1", "second answer")];
        let prompt = build_prompt(combination, "do the thing", &visible).unwrap();
        let start = prompt.find("<start>").unwrap();
        let end = prompt.find("<end>").unwrap();
        let block = &prompt[start..end];
        assert!(block.contains("first answer"));
        assert!(block.contains("second answer"));
        // Task comes after the combination block, separated by a blank line.
        assert!(prompt.ends_with("\n\ndo the thing"));
    }

    #[test]
    fn task_placeholder_is_interpolated_not_appended() {
        let t = Template::new(
            "inline",
            TemplateKind::Combination,
            "HISTORY\n${previous_responses}\nNOW DO: ${task}",
        )
        .unwrap();
        let prompt = build_prompt(&t, "my task", &[entry("t0", "x")]).unwrap();
        assert!(prompt.contains("NOW DO: my task"));
        assert!(!prompt.ends_with("my task\n\nmy task"));
        assert_eq!(prompt.matches("my task").count(), 1);
    }

    #[test]
    fn direct_profile_is_verbatim() {
        let spec = AgentSpec::new("a", "m").with_profile(ProfileSpec::Direct(
            "You are an expert copywriter for an ad agency.".into(),
        ));
        let mut rng = SeededRng::new(0);
        let resolved = resolve_profile(&spec, None, &mut rng).unwrap();
        assert_eq!(
            resolved.as_deref(),
            Some("You are an expert copywriter for an ad agency.")
        );
    }

    #[test]
    fn direct_persona_inlines_into_template() {
        let spec = AgentSpec::new("a", "m").with_profile(ProfileSpec::Persona {
            source: PersonaSource::Direct("a graphic designer".into()),
            template: TemplateRef::Builtin("anes_persona".into()),
        });
        let mut rng = SeededRng::new(0);
        let resolved = resolve_profile(&spec, None, &mut rng).unwrap().unwrap();
        assert!(resolved.contains("a graphic designer"));
        assert!(!resolved.contains("${persona}"));
        assert_eq!(resolved.matches("a graphic designer").count(), 1);
    }

    #[test]
    fn none_profile_is_absent() {
        let spec = AgentSpec::new("a", "m");
        let mut rng = SeededRng::new(0);
        assert_eq!(resolve_profile(&spec, None, &mut rng).unwrap(), None);
    }

    #[test]
    fn sampled_persona_without_dataset_fails() {
        let spec = AgentSpec::new("a", "m").with_profile(ProfileSpec::Persona {
            source: PersonaSource::Random,
            template: TemplateRef::Builtin("anes_persona".into()),
        });
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            resolve_profile(&spec, None, &mut rng),
            Err(EngineError::MissingDataset(id)) if id == "a"
        ));
    }

    #[test]
    fn take_turn_records_what_was_sent() {
        let backend = MockBackend::hash_echo();
        let spec = AgentSpec::new("a", "mock-model").with_task("answer briefly");
        let turn = take_turn(&spec, Some("sys"), "answer briefly", &[], &backend, 0, "t0").unwrap();
        assert_eq!(turn.user_prompt_sent, "answer briefly");
        assert_eq!(turn.system_instructions_sent.as_deref(), Some("sys"));
        assert!(turn.response_text.contains("answer briefly"));
        assert!(turn.visible_turn_ids.is_empty());
        assert_eq!(turn.attempt_count, 1);
    }

    #[test]
    fn take_turn_annotates_backend_errors() {
        let backend = MockBackend::sequence(vec![]);
        let spec = AgentSpec::new("agent_7", "mock-model");
        let err = take_turn(&spec, None, "task", &[], &backend, 0, "t0").unwrap_err();
        assert!(matches!(err, EngineError::Backend { agent_id, .. } if agent_id == "agent_7"));
    }

    #[test]
    fn combination_must_be_combination_kind() {
        let spec =
            AgentSpec::new("a", "m").with_combination(TemplateRef::Builtin("anes_persona".into()));
        assert!(spec.resolve_combination().is_err());
    }
}
