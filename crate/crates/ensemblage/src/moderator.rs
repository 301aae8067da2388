//! Moderators: non-participating agents that aggregate a deliberation into
//! a final response, bootstrap their own instructions (auto-moderators),
//! and act as a steerable accept/reject gate over tasks.

use serde::{Deserialize, Serialize};

use crate::agent::{
    build_prompt, now_ms, HistoryEntry, TemplateRef, TurnKind, TurnRecord,
};
use crate::backend::{Backend, ModelRequest};
use crate::error::EngineError;
use crate::template::TemplateKind;

/// Where a moderator's system instructions come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeratorProfile {
    /// No system instructions; default model behavior.
    #[default]
    None,
    /// Verbatim system instructions.
    Direct(String),
    /// The moderator asks the model to write its own instructions from the
    /// task before aggregating.
    Auto,
    /// One of the named built-in moderator profiles.
    Named(String),
}

/// Built-in moderator system instructions, by name.
pub fn moderator_profile_text(name: &str) -> Result<String, EngineError> {
    match name {
        "synthesizer" => Ok(
            "You are a moderator who synthesizes multi-agent discussion into a single, \
             faithful response."
                .into(),
        ),
        "information_aggregator" => Ok(
            "You are a moderator who aggregates the information in a multi-agent discussion \
             without adding claims of your own."
                .into(),
        ),
        "divergent" => Ok(
            "You are a creative moderator who values divergent thinking. When combining \
             responses, favor novel, unexpected ideas over familiar ones."
                .into(),
        ),
        other => Err(EngineError::InvalidConfig(format!(
            "unknown moderator profile {other:?} (expected synthesizer, \
             information_aggregator, or divergent)"
        ))),
    }
}

fn default_moderator_combination() -> TemplateRef {
    TemplateRef::Builtin("synthesizer".to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorSpec {
    #[serde(default)]
    pub profile: ModeratorProfile,
    /// Must resolve to a moderator-kind template.
    #[serde(default = "default_moderator_combination")]
    pub combination_instructions: TemplateRef,
    /// Inherits the structure task when absent.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ModeratorSpec {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModeratorSpec {
            profile: ModeratorProfile::None,
            combination_instructions: default_moderator_combination(),
            task: None,
            model_id: model_id.into(),
            temperature: None,
            max_tokens: None,
        }
    }

    pub fn with_profile(mut self, profile: ModeratorProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    pub fn with_combination(mut self, reference: TemplateRef) -> Self {
        self.combination_instructions = reference;
        self
    }

    pub fn validate(&self, structure_task: Option<&str>) -> Result<(), EngineError> {
        let template = self.combination_instructions.resolve()?;
        if template.kind != TemplateKind::Moderator {
            return Err(EngineError::InvalidConfig(format!(
                "moderator combination_instructions resolves to a {} template",
                template.kind
            )));
        }
        if let ModeratorProfile::Named(name) = &self.profile {
            moderator_profile_text(name)?;
        }
        if self.resolved_task(structure_task).is_none() {
            return Err(EngineError::MissingTask("moderator".into()));
        }
        Ok(())
    }

    pub fn resolved_task(&self, structure_task: Option<&str>) -> Option<String> {
        self.task
            .clone()
            .or_else(|| structure_task.map(str::to_string))
    }
}

/// Ask the model what a moderator's system instructions should be for
/// `task`. Returns the instructions and the distinguished trace turn for
/// the meta call.
pub fn resolve_auto_instructions(
    task: &str,
    backend: &dyn Backend,
    model_id: &str,
) -> Result<(String, TurnRecord), EngineError> {
    if task.trim().is_empty() {
        return Err(EngineError::MissingTask("moderator".into()));
    }
    let prompt = format!(
        "Given the following task, write concise system instructions for a moderator \
         who will synthesize multiple responses to it. Task: {task}. Return only the \
         instructions."
    );
    let request = ModelRequest::new(model_id, &prompt);
    let response = backend
        .complete(&request)
        .map_err(|e| EngineError::for_agent("moderator", e))?;
    let turn = TurnRecord {
        id: "meta".into(),
        kind: TurnKind::ModeratorMeta,
        agent_id: "moderator".into(),
        cycle_index: 0,
        system_instructions_sent: None,
        user_prompt_sent: prompt,
        visible_turn_ids: vec![],
        response_text: response.text.clone(),
        model_id: response.model_id,
        timestamp_ms: now_ms(),
        latency_ms: response.latency.as_millis() as u64,
        attempt_count: response.attempt_count,
    };
    Ok((response.text, turn))
}

/// Aggregate all agent turns into the moderator's final response.
pub fn aggregate(
    spec: &ModeratorSpec,
    system_instructions: Option<&str>,
    agent_turns: &[&TurnRecord],
    task: &str,
    backend: &dyn Backend,
) -> Result<TurnRecord, EngineError> {
    if agent_turns.is_empty() {
        return Err(EngineError::EmptyDeliberation);
    }
    let template = spec.combination_instructions.resolve()?;
    if template.kind != TemplateKind::Moderator {
        return Err(EngineError::InvalidConfig(format!(
            "moderator combination_instructions resolves to a {} template",
            template.kind
        )));
    }
    let visible: Vec<HistoryEntry> = agent_turns
        .iter()
        .map(|t| HistoryEntry::from_turn(t))
        .collect();
    let prompt = build_prompt(&template, task, &visible)?;
    let mut request = ModelRequest::new(&spec.model_id, &prompt);
    request.system_instructions = system_instructions.map(str::to_string);
    request.temperature = spec.temperature;
    request.max_tokens = spec.max_tokens;
    let response = backend
        .complete(&request)
        .map_err(|e| EngineError::for_agent("moderator", e))?;
    Ok(TurnRecord {
        id: "moderator".into(),
        kind: TurnKind::Moderator,
        agent_id: "moderator".into(),
        cycle_index: 0,
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

/// Full moderation pass over a finished structure run: resolve the profile
/// (auto profiles make their meta call here, recorded as a distinguished
/// turn before the aggregation turn), then aggregate.
pub(crate) fn run_moderator(
    spec: &ModeratorSpec,
    structure_task: Option<&str>,
    backend: &dyn Backend,
    turns: &mut Vec<TurnRecord>,
) -> Result<(), EngineError> {
    let task = spec
        .resolved_task(structure_task)
        .ok_or_else(|| EngineError::MissingTask("moderator".into()))?;
    let system_instructions = match &spec.profile {
        ModeratorProfile::None => None,
        ModeratorProfile::Direct(text) => Some(text.clone()),
        ModeratorProfile::Named(name) => Some(moderator_profile_text(name)?),
        ModeratorProfile::Auto => {
            let (instructions, meta_turn) =
                resolve_auto_instructions(&task, backend, &spec.model_id)?;
            turns.push(meta_turn);
            Some(instructions)
        }
    };
    let agent_turns: Vec<&TurnRecord> =
        turns.iter().filter(|t| t.kind == TurnKind::Agent).collect();
    let moderator_turn = aggregate(
        spec,
        system_instructions.as_deref(),
        &agent_turns,
        &task,
        backend,
    )?;
    turns.push(moderator_turn);
    Ok(())
}

// ---------------------------------------------------------------------------
// Steerable moderation: the accept/reject gate.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// A parsed gate verdict. `decision` and `rationale` come from the frozen
/// grammar in [`parse_gate_decision`]; `raw_completion` keeps the full model
/// output for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub decision: Decision,
    pub rationale: String,
    pub raw_completion: String,
}

/// System prompt for the gate: chain-of-thought reflection against a
/// declared value set, with a fixed output format.
pub fn gate_system_instructions(values_profile: &str) -> String {
    format!(
        "INSTRUCTIONS\n\
         You are an expert large language moderator who only accepts tasks after \
         reflecting if you should accept or reject them based on whether they violate \
         your $CustomValues.\n\
         \n\
         You have no values other than $CustomValues, but you will never complete tasks \
         that can violate $CustomValues.\n\
         \n\
         $CustomValues\n\
         {values_profile}\n\
         \n\
         Follow the following format.\n\
         Task: Task to accept or reject\n\
         Rationale: Considering my $CustomValues, only my $CustomValues, and not any \
         other values...\n\
         Decision: ACCEPT or REJECT"
    )
}

/// Parse a gate completion.
///
/// Grammar (frozen): the decision is the last line matching
/// `Decision:\s*(ACCEPT|REJECT)` case-insensitively; the rationale is the
/// text after the first `Rationale:` marker up to the decision line. A
/// completion with no decision line is an error, never a default.
pub fn parse_gate_decision(raw: &str) -> Result<(Decision, String), EngineError> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut decision = None;
    for (i, line) in lines.iter().enumerate() {
        if let Some(rest) = strip_prefix_ci(line.trim(), "decision:") {
            let word: String = rest
                .trim_start()
                .chars()
                .take_while(|c| c.is_ascii_alphabetic())
                .collect();
            if word.eq_ignore_ascii_case("accept") {
                decision = Some((Decision::Accept, i));
            } else if word.eq_ignore_ascii_case("reject") {
                decision = Some((Decision::Reject, i));
            }
        }
    }
    let Some((decision, decision_line)) = decision else {
        return Err(EngineError::UnparseableDecision(raw.to_string()));
    };
    let mut rationale = String::new();
    for (i, line) in lines.iter().enumerate().take(decision_line) {
        if let Some(rest) = strip_prefix_ci(line.trim_start(), "rationale:") {
            let mut parts = vec![rest.trim().to_string()];
            parts.extend(
                lines[i + 1..decision_line]
                    .iter()
                    .map(|l| l.trim().to_string()),
            );
            rationale = parts.join("\n").trim().to_string();
            break;
        }
    }
    Ok((decision, rationale))
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    if text.len() >= prefix.len() && text[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&text[prefix.len()..])
    } else {
        None
    }
}

/// Decide whether to accept a task given a value set. One completion;
/// returns the parsed decision plus the trace turn for the call.
pub fn gate(
    values_profile: &str,
    task: &str,
    backend: &dyn Backend,
    model_id: &str,
) -> Result<(GateDecision, TurnRecord), EngineError> {
    if values_profile.trim().is_empty() {
        return Err(EngineError::InvalidConfig(
            "gate values profile must be non-empty".into(),
        ));
    }
    if task.trim().is_empty() {
        return Err(EngineError::MissingTask("gate".into()));
    }
    let system = gate_system_instructions(values_profile);
    let user = format!("Task: {task}");
    let request = ModelRequest::new(model_id, &user).with_system(system);
    let response = backend
        .complete(&request)
        .map_err(|e| EngineError::for_agent("gate", e))?;
    let (decision, rationale) = parse_gate_decision(&response.text)?;
    let gate_decision = GateDecision {
        decision,
        rationale,
        raw_completion: response.text.clone(),
    };
    let turn = TurnRecord {
        id: "gate".into(),
        kind: TurnKind::Gate,
        agent_id: "gate".into(),
        cycle_index: 0,
        system_instructions_sent: request.system_instructions.clone(),
        user_prompt_sent: request.user_message.clone(),
        visible_turn_ids: vec![],
        response_text: response.text,
        model_id: response.model_id,
        timestamp_ms: now_ms(),
        latency_ms: response.latency.as_millis() as u64,
        attempt_count: response.attempt_count,
    };
    Ok((gate_decision, turn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use std::collections::BTreeMap;

    #[test]
    fn gate_parses_reject() {
        let raw = "Task: something\nRationale: this causes harm to people.\nDecision: REJECT";
        let (decision, rationale) = parse_gate_decision(raw).unwrap();
        assert_eq!(decision, Decision::Reject);
        assert_eq!(rationale, "this causes harm to people.");
    }

    #[test]
    fn gate_parses_mixed_case_and_last_match_wins() {
        let raw =
            "Decision: accept\nwait, reconsidering\nRationale: on reflection...\ndecision: REJECT.";
        let (decision, _) = parse_gate_decision(raw).unwrap();
        assert_eq!(decision, Decision::Reject);
    }

    #[test]
    fn gate_multiline_rationale() {
        let raw = "Rationale: line one\nline two\nDecision: ACCEPT";
        let (decision, rationale) = parse_gate_decision(raw).unwrap();
        assert_eq!(decision, Decision::Accept);
        assert_eq!(rationale, "line one\nline two");
    }

    #[test]
    fn gate_without_decision_is_unparseable() {
        assert!(matches!(
            parse_gate_decision("Rationale: hmm, unclear."),
            Err(EngineError::UnparseableDecision(_))
        ));
        assert!(matches!(
            parse_gate_decision("Decision: MAYBE"),
            Err(EngineError::UnparseableDecision(_))
        ));
    }

    #[test]
    fn gate_parse_is_pure() {
        let raw = "Rationale: x\nDecision: ACCEPT";
        assert_eq!(
            parse_gate_decision(raw).unwrap(),
            parse_gate_decision(raw).unwrap()
        );
    }

    #[test]
    fn gate_round_trip_on_scripted_mock() {
        let backend = MockBackend::scripted(
            BTreeMap::new(),
            Some("Rationale: conflicts with my values.\nDecision: REJECT".into()),
        );
        let (decision, turn) = gate("Avoid all harms.", "do a thing", &backend, "m").unwrap();
        assert_eq!(decision.decision, Decision::Reject);
        assert_eq!(turn.kind, TurnKind::Gate);
        assert!(turn
            .system_instructions_sent
            .unwrap()
            .contains("$CustomValues"));
        assert_eq!(turn.user_prompt_sent, "Task: do a thing");
    }

    #[test]
    fn gate_requires_inputs() {
        let backend = MockBackend::hash_echo();
        assert!(gate("", "task", &backend, "m").is_err());
        assert!(gate("values", " ", &backend, "m").is_err());
    }

    #[test]
    fn auto_instructions_embed_task() {
        let backend = MockBackend::hash_echo();
        let (text, turn) = resolve_auto_instructions("summarize x", &backend, "m").unwrap();
        assert!(turn.user_prompt_sent.contains("summarize x"));
        assert_eq!(turn.kind, TurnKind::ModeratorMeta);
        assert_eq!(text, turn.response_text);
    }

    #[test]
    fn aggregate_requires_turns() {
        let spec = ModeratorSpec::new("m");
        let backend = MockBackend::hash_echo();
        assert!(matches!(
            aggregate(&spec, None, &[], "task", &backend),
            Err(EngineError::EmptyDeliberation)
        ));
    }

    #[test]
    fn named_profiles_resolve() {
        assert!(moderator_profile_text("synthesizer").is_ok());
        assert!(moderator_profile_text("information_aggregator").is_ok());
        assert!(moderator_profile_text("divergent").is_ok());
        assert!(moderator_profile_text("nope").is_err());
    }
}
