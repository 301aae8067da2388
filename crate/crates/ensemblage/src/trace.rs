//! The deliberation trace: a complete, replayable record of one run.
//!
//! A trace captures the config snapshot (seed included), every turn's exact
//! prompts and responses, and the final outcome. Replaying the config with
//! the same seed and mock backend reproduces identical prompts, which makes
//! the trace an audit artifact: nothing an agent saw or said is outside it.
//!
//! Traces serialize to JSON with a `schema_version` field; readers must
//! reject versions they do not understand.

use serde::{Deserialize, Serialize};

use crate::agent::{TurnKind, TurnRecord};
use crate::error::EngineError;
use crate::moderator::Decision;
use crate::structures::StructureConfig;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Complete,
    /// The pre-structure gate rejected the task; no deliberation ran.
    GateRejected,
    /// The run failed part-way; `turns` holds what completed.
    Failed,
}

/// Outcome of a pre-structure gate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub decision: Decision,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliberationTrace {
    pub schema_version: u32,
    pub config: StructureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateOutcome>,
    pub turns: Vec<TurnRecord>,
    pub final_response: String,
    pub moderated: bool,
    pub status: TraceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DeliberationTrace {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Zero timestamps and latencies, for comparing traces modulo timing.
    pub fn zero_timing(&mut self) {
        for turn in &mut self.turns {
            turn.timestamp_ms = 0;
            turn.latency_ms = 0;
        }
    }

    pub fn agent_turns(&self) -> impl Iterator<Item = &TurnRecord> {
        self.turns.iter().filter(|t| t.kind == TurnKind::Agent)
    }
}

/// Render a human-readable transcript of a trace: per turn, who spoke,
/// what instructions and prompt they were sent, and what they answered.
pub fn render_transcript(trace: &DeliberationTrace) -> Result<String, EngineError> {
    if trace.schema_version != TRACE_SCHEMA_VERSION {
        return Err(EngineError::SchemaVersionUnsupported(trace.schema_version));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "Deliberation transcript ({} structure, {} turn(s), seed {})\n",
        trace.config.variant.kind_name(),
        trace.turns.len(),
        trace.config.seed,
    ));
    if let Some(gate) = &trace.gate {
        out.push_str(&format!(
            "Gate: {:?} ({})\n",
            gate.decision,
            if gate.rationale.is_empty() {
                "(no rationale)"
            } else {
                &gate.rationale
            }
        ));
    }
    for (i, turn) in trace.turns.iter().enumerate() {
        let role = match turn.kind {
            TurnKind::Agent => "agent",
            TurnKind::Moderator => "moderator",
            TurnKind::ModeratorMeta => "moderator meta",
            TurnKind::Gate => "gate",
        };
        out.push_str(&format!(
            "\n--- turn {} [{}] {} (cycle {}, model {}) ---\n",
            i + 1,
            role,
            turn.agent_id,
            turn.cycle_index,
            turn.model_id
        ));
        match &turn.system_instructions_sent {
            Some(sys) => out.push_str(&format!("system instructions:\n{sys}\n")),
            None => out.push_str("system instructions: (none)\n"),
        }
        out.push_str(&format!("prompt:\n{}\n", turn.user_prompt_sent));
        out.push_str(&format!("response:\n{}\n", turn.response_text));
    }
    out.push_str(&format!(
        "\n=== final response ===\n{}\n",
        trace.final_response
    ));
    if let Some(err) = &trace.error {
        out.push_str(&format!("\n(run failed: {err})\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentSpec;
    use crate::structures::StructureVariant;

    fn tiny_trace() -> DeliberationTrace {
        DeliberationTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            config: StructureConfig::new(StructureVariant::Ensemble {
                agents: vec![AgentSpec::new("a", "m")],
            })
            .with_task("t"),
            gate: None,
            turns: vec![TurnRecord {
                id: "t0".into(),
                kind: TurnKind::Agent,
                agent_id: "a".into(),
                cycle_index: 0,
                system_instructions_sent: None,
                user_prompt_sent: "t".into(),
                visible_turn_ids: vec![],
                response_text: "answer".into(),
                model_id: "m".into(),
                timestamp_ms: 123,
                latency_ms: 4,
                attempt_count: 1,
            }],
            final_response: "answer".into(),
            moderated: false,
            status: TraceStatus::Complete,
            error: None,
        }
    }

    #[test]
    fn round_trips_through_json() {
        let trace = tiny_trace();
        let parsed = DeliberationTrace::from_json(&trace.to_json_pretty()).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn zero_timing_scrubs_all_turns() {
        let mut trace = tiny_trace();
        trace.zero_timing();
        assert_eq!(trace.turns[0].timestamp_ms, 0);
        assert_eq!(trace.turns[0].latency_ms, 0);
    }

    #[test]
    fn transcript_contains_prompt_and_response() {
        let text = render_transcript(&tiny_trace()).unwrap();
        assert!(text.contains("prompt:\nt"));
        assert!(text.contains("response:\nanswer"));
        assert!(text.contains("final response"));
    }

    #[test]
    fn unsupported_schema_version_rejected() {
        let mut trace = tiny_trace();
        trace.schema_version = 999;
        assert!(matches!(
            render_transcript(&trace),
            Err(EngineError::SchemaVersionUnsupported(999))
        ));
    }
}
