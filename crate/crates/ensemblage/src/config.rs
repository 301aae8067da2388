//! Declarative run definitions: one JSON document per deliberation.
//!
//! A run spec names the structure (agents, templates, moderator, gate), the
//! backend (a live provider or a mock mode), optional dataset paths and an
//! output path for the trace. Validation resolves every reference (template
//! names, dataset columns, agent ids) before any backend call and reports
//! all problems at once, each with a JSON-path-style location.
//!
//! Relative dataset/codebook/output paths resolve against the spec file's
//! directory, so checked-in run files work from any working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{PersonaSource, ProfileSpec, TemplateRef};
use crate::backend::{Backend, BackendError, MockBackend, OpenAiCompatBackend};
use crate::error::EngineError;
use crate::metrics::Corpus;
use crate::moderator::{self, Decision, ModeratorProfile};
use crate::persona::{load_dataset, PersonaDataset, PersonaQuery};
use crate::structures::{
    process_traced, topological_order, ExecOptions, StructureRegistry, StructureVariant,
};
use crate::template::TemplateKind;
use crate::trace::{DeliberationTrace, GateOutcome, TraceStatus, TRACE_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockSpec {
    HashEcho,
    Scripted {
        #[serde(default)]
        script: BTreeMap<String, String>,
        #[serde(default)]
        fallback: Option<String>,
    },
    Sequence {
        items: Vec<String>,
    },
}

impl MockSpec {
    pub fn build(&self) -> MockBackend {
        match self {
            MockSpec::HashEcho => MockBackend::hash_echo(),
            MockSpec::Scripted { script, fallback } => {
                MockBackend::scripted(script.clone(), fallback.clone())
            }
            MockSpec::Sequence { items } => MockBackend::sequence(items.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock {
        #[serde(default = "default_mock")]
        mock: MockSpec,
    },
    Live {
        provider: String,
    },
}

fn default_mock() -> MockSpec {
    MockSpec::HashEcho
}

/// Pre-structure steerable moderation: the gate checks the structure task
/// against a value set before any deliberation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub values: String,
    /// Model for the gate call; defaults to the first agent's model.
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub structure: crate::structures::StructureConfig,
    pub backend: BackendSpec,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub codebook_path: Option<PathBuf>,
    #[serde(default)]
    pub gate: Option<GateSpec>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// One validation finding, with a JSON-path-style location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// Expand `"count": N` on agent entries into N copies with `_1.._N` id
/// suffixes, so ten identical focus-group agents stay one JSON object.
fn expand_counts(value: &mut serde_json::Value) -> Result<(), String> {
    let Some(agents) = value
        .get_mut("structure")
        .and_then(|s| s.get_mut("agents"))
        .and_then(|a| a.as_array_mut())
    else {
        return Ok(());
    };
    let mut expanded = Vec::new();
    for entry in agents.drain(..) {
        let count = entry.get("count").and_then(|c| c.as_u64()).unwrap_or(1);
        if count == 0 {
            return Err("agent count must be >= 1".into());
        }
        let mut base = entry;
        if let Some(obj) = base.as_object_mut() {
            obj.remove("count");
        }
        if count == 1 {
            expanded.push(base);
            continue;
        }
        let id = base
            .get("id")
            .and_then(|i| i.as_str())
            .ok_or("agent with count > 1 must have an id")?
            .to_string();
        for i in 1..=count {
            let mut copy = base.clone();
            copy["id"] = serde_json::Value::String(format!("{id}_{i}"));
            expanded.push(copy);
        }
    }
    *agents = expanded;
    Ok(())
}

/// Load a run spec from a JSON file.
pub fn load_run_spec(path: impl AsRef<Path>) -> Result<RunSpec, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_run_spec(&text, &path.display().to_string())
}

pub fn parse_run_spec(text: &str, origin: &str) -> Result<RunSpec, ConfigError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
    expand_counts(&mut value).map_err(|message| ConfigError::Format {
        path: origin.to_string(),
        message,
    })?;
    serde_json::from_value(value).map_err(|source| ConfigError::Parse {
        path: origin.to_string(),
        source,
    })
}

fn resolve_path(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

fn check_template_ref(
    diags: &mut Vec<Diagnostic>,
    path: String,
    reference: &TemplateRef,
    expected: TemplateKind,
) {
    match reference.resolve() {
        Ok(template) => {
            if template.kind != expected {
                diags.push(Diagnostic::new(
                    path,
                    format!(
                        "template {:?} has kind {}, expected {expected}",
                        template.name, template.kind
                    ),
                ));
            }
        }
        Err(e) => diags.push(Diagnostic::new(path, e)),
    }
}

/// Validate a run spec without any network I/O. Returns every finding.
pub fn validate_run_spec(spec: &RunSpec, base_dir: &Path) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let structure = &spec.structure;
    let agents = structure.variant.agents();

    if agents.is_empty() {
        diags.push(Diagnostic::new(
            "structure.agents",
            "structure requires at least one agent",
        ));
    }
    if structure.cycles == 0 {
        diags.push(Diagnostic::new("structure.cycles", "cycles must be >= 1"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (i, agent) in agents.iter().enumerate() {
        if !seen.insert(agent.id.as_str()) {
            diags.push(Diagnostic::new(
                format!("structure.agents[{i}].id"),
                format!("duplicate agent id {:?}", agent.id),
            ));
        }
    }

    match &structure.variant {
        StructureVariant::Debate { agents, last_n } => {
            if agents.len() != 2 {
                diags.push(Diagnostic::new(
                    "structure.agents",
                    format!("Debate requires exactly two agents, got {}", agents.len()),
                ));
            }
            if *last_n == Some(0) {
                diags.push(Diagnostic::new("structure.last_n", "last_n must be >= 1"));
            }
        }
        StructureVariant::Chain { last_n, .. } => {
            if *last_n == Some(0) {
                diags.push(Diagnostic::new("structure.last_n", "last_n must be >= 1"));
            }
        }
        StructureVariant::Graph { agents, edges } => {
            if structure.cycles != 1 {
                diags.push(Diagnostic::new(
                    "structure.cycles",
                    "Graph does not support cycles",
                ));
            }
            let ids: Vec<String> = agents.iter().map(|a| a.id.clone()).collect();
            if let Err(e) = topological_order(&ids, edges) {
                diags.push(Diagnostic::new("structure.edges", e));
            }
        }
        StructureVariant::Custom { name, .. } => {
            // Custom structures require a caller-registered executor; flag
            // explicitly so CLI users learn why the file cannot run alone.
            diags.push(Diagnostic::new(
                "structure.name",
                format!("custom structure {name:?} requires a registered executor"),
            ));
        }
        StructureVariant::Ensemble { .. } => {}
    }

    let mut needs_dataset = false;
    for (i, agent) in agents.iter().enumerate() {
        let where_ = |field: &str| format!("structure.agents[{i}].{field}");
        if agent.task.is_none() && structure.task.is_none() {
            diags.push(Diagnostic::new(
                where_("task"),
                format!(
                    "agent {:?} has no task and the structure defines none",
                    agent.id
                ),
            ));
        }
        check_template_ref(
            &mut diags,
            where_("combination_instructions"),
            &agent.combination_instructions,
            TemplateKind::Combination,
        );
        if let ProfileSpec::Persona { source, template } = &agent.profile {
            check_template_ref(
                &mut diags,
                where_("profile.template"),
                template,
                TemplateKind::Persona,
            );
            match source {
                PersonaSource::Query(text) => {
                    needs_dataset = true;
                    if let Err(e) = PersonaQuery::parse(text) {
                        diags.push(Diagnostic::new(where_("profile.source.query"), e));
                    }
                }
                PersonaSource::Ideology(_) | PersonaSource::Random => needs_dataset = true,
                PersonaSource::Direct(_) => {}
            }
        }
        if let Some(t) = agent.temperature {
            if !t.is_finite() || t < 0.0 {
                diags.push(Diagnostic::new(
                    where_("temperature"),
                    "temperature must be finite and >= 0",
                ));
            }
        }
    }

    if let Some(moderator) = &structure.moderator {
        check_template_ref(
            &mut diags,
            "structure.moderator.combination_instructions".into(),
            &moderator.combination_instructions,
            TemplateKind::Moderator,
        );
        if let ModeratorProfile::Named(name) = &moderator.profile {
            if let Err(e) = moderator::moderator_profile_text(name) {
                diags.push(Diagnostic::new("structure.moderator.profile", e));
            }
        }
        if moderator.resolved_task(structure.task.as_deref()).is_none() {
            diags.push(Diagnostic::new(
                "structure.moderator.task",
                "moderator has no task and the structure defines none",
            ));
        }
    }

    if let Some(gate) = &spec.gate {
        if gate.values.trim().is_empty() {
            diags.push(Diagnostic::new(
                "gate.values",
                "gate values must be non-empty",
            ));
        }
        if structure.task.is_none() {
            diags.push(Diagnostic::new(
                "gate",
                "gate requires a structure task to judge",
            ));
        }
    }

    if let BackendSpec::Live { provider } = &spec.backend {
        if provider.trim().is_empty() {
            diags.push(Diagnostic::new(
                "backend.provider",
                "provider must be non-empty",
            ));
        }
    }

    // Dataset checks: presence when personas sample, then a full load so
    // schema and codebook problems surface here rather than mid-run.
    match (&spec.dataset_path, &spec.codebook_path) {
        (Some(dataset_path), Some(codebook_path)) => {
            let dataset_path = resolve_path(base_dir, dataset_path);
            let codebook_path = resolve_path(base_dir, codebook_path);
            match load_dataset(&dataset_path, &codebook_path) {
                Ok(dataset) => {
                    for (i, agent) in agents.iter().enumerate() {
                        if let ProfileSpec::Persona {
                            source: PersonaSource::Query(text),
                            ..
                        } = &agent.profile
                        {
                            if let Ok(query) = PersonaQuery::parse(text) {
                                for clause in &query.clauses {
                                    if !dataset.columns().contains(&clause.column) {
                                        diags.push(Diagnostic::new(
                                            format!("structure.agents[{i}].profile.source.query"),
                                            format!("unknown column {:?}", clause.column),
                                        ));
                                    }
                                }
                            }
                        }
                    }
                }
                Err(e) => diags.push(Diagnostic::new("dataset_path", e)),
            }
        }
        (None, None) => {
            if needs_dataset {
                diags.push(Diagnostic::new(
                    "dataset_path",
                    "agents sample personas from a dataset, but no dataset_path/codebook_path is set",
                ));
            }
        }
        _ => diags.push(Diagnostic::new(
            "dataset_path",
            "dataset_path and codebook_path must be set together",
        )),
    }

    diags
}

/// Command-line overrides applied on top of a run spec.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    /// Force the mock backend regardless of the spec's backend mode.
    pub force_mock: bool,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    /// Point the run at a different dataset/codebook pair.
    pub dataset: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    /// Sequential execution (for determinism checks).
    pub sequential: bool,
}

impl RunOverrides {
    /// The spec with seed/path overrides applied; validation and execution
    /// both see the same effective spec. Override paths come from the
    /// command line, so they resolve against the working directory (made
    /// absolute here), not the spec file's directory.
    fn apply(&self, spec: &RunSpec) -> RunSpec {
        let absolute = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                std::env::current_dir()
                    .map(|cwd| cwd.join(p))
                    .unwrap_or_else(|_| p.clone())
            }
        };
        let mut spec = spec.clone();
        if let Some(seed) = self.seed {
            spec.structure.seed = seed;
        }
        if let Some(dataset) = &self.dataset {
            spec.dataset_path = Some(absolute(dataset));
        }
        if let Some(codebook) = &self.codebook {
            spec.codebook_path = Some(absolute(codebook));
        }
        if let Some(output) = &self.output {
            spec.output_path = Some(absolute(output));
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    GateRejected,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub trace: DeliberationTrace,
    pub final_response: String,
    /// Where the trace was written, when an output path was configured.
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run spec failed validation with {} finding(s)", .0.len())]
    Validation(Vec<Diagnostic>),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("writing trace {path}: {source}")]
    TraceWrite {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn build_backend(spec: &BackendSpec, force_mock: bool) -> Result<Box<dyn Backend>, BackendError> {
    if force_mock {
        return Ok(match spec {
            // A spec that already defines a mock keeps its scripted
            // behavior under --mock.
            BackendSpec::Mock { mock } => Box::new(mock.build()),
            BackendSpec::Live { .. } => Box::new(MockBackend::hash_echo()),
        });
    }
    match spec {
        BackendSpec::Mock { mock } => Ok(Box::new(mock.build())),
        BackendSpec::Live { provider } => Ok(Box::new(OpenAiCompatBackend::from_env(provider)?)),
    }
}

fn write_trace(trace: &DeliberationTrace, path: &Path) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| RunError::TraceWrite {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, trace.to_json_pretty()).map_err(|source| RunError::TraceWrite {
        path: path.display().to_string(),
        source,
    })
}

/// Validate and execute a run spec end to end: optional gate, structure,
/// moderator, trace persistence.
///
/// The trace is flushed to the output path even when the run fails
/// part-way (status `failed`) or the gate rejects (status
/// `gate_rejected`).
pub fn execute_run(
    spec: &RunSpec,
    base_dir: &Path,
    overrides: &RunOverrides,
    registry: Option<&StructureRegistry>,
) -> Result<RunOutcome, RunError> {
    let spec = overrides.apply(spec);
    let diags = validate_run_spec(&spec, base_dir);
    if !diags.is_empty() {
        return Err(RunError::Validation(diags));
    }

    let config = spec.structure.clone();
    let trace_path = spec.output_path.clone().map(|p| resolve_path(base_dir, &p));

    let dataset: Option<PersonaDataset> = match (&spec.dataset_path, &spec.codebook_path) {
        (Some(d), Some(c)) => Some(
            load_dataset(resolve_path(base_dir, d), resolve_path(base_dir, c))
                .map_err(EngineError::from)?,
        ),
        _ => None,
    };

    let backend = build_backend(&spec.backend, overrides.force_mock)?;
    let options = ExecOptions {
        parallel: !overrides.sequential,
    };

    // Pre-structure gate: a rejection means the structure never runs and
    // the trace records the refusal.
    let mut gate_state: Option<(GateOutcome, crate::agent::TurnRecord)> = None;
    if let Some(gate_spec) = &spec.gate {
        let task = config.task.as_deref().expect("validated above");
        let model = gate_spec
            .model
            .clone()
            .unwrap_or_else(|| config.variant.agents()[0].model_id.clone());
        let (decision, turn) = moderator::gate(&gate_spec.values, task, backend.as_ref(), &model)?;
        let outcome = GateOutcome {
            decision: decision.decision,
            rationale: decision.rationale.clone(),
        };
        if decision.decision == Decision::Reject {
            let trace = DeliberationTrace {
                schema_version: TRACE_SCHEMA_VERSION,
                config,
                gate: Some(outcome),
                turns: vec![turn],
                final_response: String::new(),
                moderated: false,
                status: TraceStatus::GateRejected,
                error: None,
            };
            if let Some(path) = &trace_path {
                write_trace(&trace, path)?;
            }
            return Ok(RunOutcome {
                status: RunStatus::GateRejected,
                final_response: String::new(),
                trace,
                trace_path,
            });
        }
        gate_state = Some((outcome, turn));
    }

    let (mut trace, result) = process_traced(
        &config,
        backend.as_ref(),
        dataset.as_ref(),
        options,
        registry,
    );
    if let Some((outcome, turn)) = gate_state {
        trace.gate = Some(outcome);
        trace.turns.insert(0, turn);
    }
    if let Some(path) = &trace_path {
        write_trace(&trace, path)?;
    }
    match result {
        Ok(()) => Ok(RunOutcome {
            status: RunStatus::Completed,
            final_response: trace.final_response.clone(),
            trace,
            trace_path,
        }),
        Err(e) => Err(RunError::Engine(e)),
    }
}

/// Read corpora from a JSON-lines file: one `{"label": ..., "text": ...}`
/// object per line, grouped by label in first-seen order.
pub fn load_corpora_jsonl(path: impl AsRef<Path>) -> Result<Vec<Corpus>, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;

    #[derive(Deserialize)]
    struct Line {
        label: String,
        text: String,
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line).map_err(|source| ConfigError::Parse {
            path: format!("{}:{}", path.display(), number + 1),
            source,
        })?;
        if !groups.contains_key(&parsed.label) {
            order.push(parsed.label.clone());
        }
        groups.entry(parsed.label).or_default().push(parsed.text);
    }
    Ok(order
        .into_iter()
        .map(|label| {
            let documents = groups.remove(&label).expect("grouped above");
            Corpus { label, documents }
        })
        .collect())
}
