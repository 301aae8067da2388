//! Engine-wide error type.

use thiserror::Error;

use crate::backend::BackendError;
use crate::persona::PersonaError;
use crate::template::TemplateError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error("agent {agent_id:?}: {source}")]
    Backend {
        agent_id: String,
        #[source]
        source: BackendError,
    },
    #[error("agent {0:?} has no task and the structure defines none")]
    MissingTask(String),
    #[error("agent {0:?} uses a persona source but no dataset was provided")]
    MissingDataset(String),
    #[error("graph contains a cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("structure name {0:?} is already registered")]
    DuplicateName(String),
    #[error("unknown custom structure {0:?} (no registry entry)")]
    UnknownStructure(String),
    #[error("invalid structure config: {0}")]
    InvalidConfig(String),
    #[error("moderator has no turns to aggregate")]
    EmptyDeliberation,
    #[error("no decision line found in completion: {0:?}")]
    UnparseableDecision(String),
    #[error("incomplete trace: backend saw {calls} completions, trace records {recorded}")]
    TraceIncomplete { calls: u64, recorded: u64 },
    #[error("unsupported trace schema_version {0}")]
    SchemaVersionUnsupported(u32),
}

impl EngineError {
    /// Attach the acting agent's id to a raw backend failure.
    pub fn for_agent(agent_id: &str, source: BackendError) -> Self {
        EngineError::Backend {
            agent_id: agent_id.to_string(),
            source,
        }
    }
}
