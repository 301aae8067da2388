//! Information-sharing structures: Ensemble, Chain, Debate, Graph, plus a
//! registry for custom structures.
//!
//! A structure decides turn order and what each agent sees:
//!
//! - **Ensemble**: agents answer in isolation; nothing is shared.
//! - **Chain**: agents answer in sequence, each seeing a trailing window
//!   (`last_n`) of prior responses; the order can reshuffle every cycle.
//! - **Debate**: exactly two agents alternate for `cycles` rounds, each
//!   seeing the tagged back-and-forth history.
//! - **Graph**: a DAG of agents; an edge `(a -> b)` means b sees a's
//!   response, and only direct predecessors are visible.
//!
//! Execution is deterministic given the config seed and a mock backend:
//! independent turns (ensemble cycles, graph stages) may run on threads,
//! but results are assembled in plan order so the trace never depends on
//! physical interleaving.

mod kahn;

pub use kahn::{topological_order, TopoOrder};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{resolve_profile, take_turn, AgentSpec, HistoryEntry, TurnKind, TurnRecord};
use crate::backend::{Backend, CountingBackend};
use crate::error::EngineError;
use crate::moderator::{self, ModeratorSpec};
use crate::persona::PersonaDataset;
use crate::rng::SeededRng;
use crate::trace::{DeliberationTrace, TraceStatus, TRACE_SCHEMA_VERSION};

/// Stream labels for deriving independent RNG streams from the run seed.
const SHUFFLE_STREAM_BASE: u64 = 0x5348_5546_0000_0000;
const CUSTOM_STREAM: u64 = 0x4355_5354_0000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureVariant {
    Ensemble {
        agents: Vec<AgentSpec>,
    },
    Chain {
        agents: Vec<AgentSpec>,
        #[serde(default)]
        shuffle: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        last_n: Option<u32>,
    },
    Debate {
        agents: Vec<AgentSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        last_n: Option<u32>,
    },
    Graph {
        agents: Vec<AgentSpec>,
        edges: Vec<(String, String)>,
    },
    /// Dispatched through a [`StructureRegistry`] by name.
    Custom {
        name: String,
        agents: Vec<AgentSpec>,
    },
}

impl StructureVariant {
    pub fn agents(&self) -> &[AgentSpec] {
        match self {
            StructureVariant::Ensemble { agents }
            | StructureVariant::Chain { agents, .. }
            | StructureVariant::Debate { agents, .. }
            | StructureVariant::Graph { agents, .. }
            | StructureVariant::Custom { agents, .. } => agents,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StructureVariant::Ensemble { .. } => "ensemble",
            StructureVariant::Chain { .. } => "chain",
            StructureVariant::Debate { .. } => "debate",
            StructureVariant::Graph { .. } => "graph",
            StructureVariant::Custom { .. } => "custom",
        }
    }
}

fn default_cycles() -> u32 {
    1
}

/// A full deliberation definition: variant plus the shared knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    #[serde(flatten)]
    pub variant: StructureVariant,
    #[serde(default = "default_cycles")]
    pub cycles: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moderator: Option<ModeratorSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl StructureConfig {
    pub fn new(variant: StructureVariant) -> Self {
        StructureConfig {
            variant,
            cycles: 1,
            task: None,
            moderator: None,
            seed: 0,
        }
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    pub fn with_cycles(mut self, cycles: u32) -> Self {
        self.cycles = cycles;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_moderator(mut self, moderator: ModeratorSpec) -> Self {
        self.moderator = Some(moderator);
        self
    }

    /// Structural invariants, checked before any backend call.
    pub fn validate(&self) -> Result<(), EngineError> {
        let agents = self.variant.agents();
        if agents.is_empty() {
            return Err(EngineError::InvalidConfig(
                "structure requires at least one agent".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for agent in agents {
            if !seen.insert(agent.id.as_str()) {
                return Err(EngineError::InvalidConfig(format!(
                    "duplicate agent id {:?}",
                    agent.id
                )));
            }
        }
        if self.cycles == 0 {
            return Err(EngineError::InvalidConfig("cycles must be >= 1".into()));
        }
        match &self.variant {
            StructureVariant::Debate { agents, last_n } => {
                if agents.len() != 2 {
                    return Err(EngineError::InvalidConfig(format!(
                        "Debate requires exactly two agents, got {}",
                        agents.len()
                    )));
                }
                check_last_n(*last_n)?;
            }
            StructureVariant::Chain { last_n, .. } => check_last_n(*last_n)?,
            StructureVariant::Graph { agents, edges } => {
                if self.cycles != 1 {
                    return Err(EngineError::InvalidConfig(
                        "Graph does not support cycles; repetition is limited to \
                         Chain, Debate and Ensemble"
                            .into(),
                    ));
                }
                let ids: Vec<String> = agents.iter().map(|a| a.id.clone()).collect();
                topological_order(&ids, edges)?;
            }
            _ => {}
        }
        for agent in agents {
            agent.resolve_combination()?;
            if agent.task.is_none() && self.task.is_none() {
                return Err(EngineError::MissingTask(agent.id.clone()));
            }
        }
        if let Some(moderator) = &self.moderator {
            moderator.validate(self.task.as_deref())?;
        }
        Ok(())
    }
}

fn check_last_n(last_n: Option<u32>) -> Result<(), EngineError> {
    if last_n == Some(0) {
        return Err(EngineError::InvalidConfig(
            "last_n must be >= 1 when bounded".into(),
        ));
    }
    Ok(())
}

/// Agent order for one chain cycle. Without shuffle the declared order is
/// used every cycle; with shuffle each cycle gets an independent seeded
/// permutation.
pub fn chain_order(
    agent_ids: &[String],
    cycle_index: u32,
    shuffle: bool,
    rng: &SeededRng,
) -> Vec<String> {
    let mut order: Vec<String> = agent_ids.to_vec();
    if shuffle {
        let mut stream = rng.derive(SHUFFLE_STREAM_BASE + cycle_index as u64);
        stream.shuffle(&mut order);
    }
    order
}

/// How a turn's visible set is computed from the history so far.
#[derive(Debug, Clone, PartialEq)]
pub enum VisibilityRule {
    /// Ensemble: nothing is ever visible.
    Isolated,
    /// Chain/Debate: the trailing `last_n` turns (all, when unbounded).
    Window,
    /// Graph: all turns of the node's direct predecessors, and nothing else.
    Predecessors(BTreeSet<String>),
}

/// Select the visible turns for the next turn, in chronological order.
pub fn visible_turns<'a>(
    rule: &VisibilityRule,
    history: &'a [TurnRecord],
    last_n: Option<u32>,
) -> Vec<&'a TurnRecord> {
    match rule {
        VisibilityRule::Isolated => Vec::new(),
        VisibilityRule::Window => {
            let window = match last_n {
                Some(n) => (n as usize).min(history.len()),
                None => history.len(),
            };
            history[history.len() - window..].iter().collect()
        }
        VisibilityRule::Predecessors(ids) => history
            .iter()
            .filter(|turn| ids.contains(&turn.agent_id))
            .collect(),
    }
}

/// An agent with its profile and task resolved for this run.
#[derive(Debug, Clone)]
pub struct ResolvedAgent {
    pub spec: AgentSpec,
    pub system_instructions: Option<String>,
    pub task: Option<String>,
}

/// Execution knobs. `parallel` toggles stage-parallel execution for
/// ensembles and graph stages; traces are identical either way.
#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    pub parallel: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { parallel: true }
    }
}

/// The outcome of a deliberation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliberationResult {
    /// Chronological turn records (agents first, then any moderator turns).
    pub responses: Vec<TurnRecord>,
    /// The moderator's response when moderated, else the last agent turn's.
    pub final_response: String,
    pub moderated: bool,
    pub trace: DeliberationTrace,
}

/// Contract for custom structures: consume the context, produce turns.
///
/// The engine resolves profiles and tasks, hands the executor a
/// [`CustomCtx`], and afterwards verifies that every backend call made is
/// recorded in the trace exactly once.
pub trait CustomExecutor: Send + Sync {
    fn execute(&self, ctx: &mut CustomCtx<'_>) -> Result<(), EngineError>;
}

/// Registry of custom structure executors, looked up by config name.
#[derive(Default)]
pub struct StructureRegistry {
    executors: BTreeMap<String, Arc<dyn CustomExecutor>>,
}

impl StructureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        executor: Arc<dyn CustomExecutor>,
    ) -> Result<(), EngineError> {
        let name = name.into();
        if self.executors.contains_key(&name) {
            return Err(EngineError::DuplicateName(name));
        }
        self.executors.insert(name, executor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn CustomExecutor>> {
        self.executors.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.executors.keys().map(String::as_str).collect()
    }
}

/// Execution context handed to custom executors.
pub struct CustomCtx<'a> {
    agents: &'a [ResolvedAgent],
    cycles: u32,
    backend: &'a dyn Backend,
    rng: SeededRng,
    turns: Vec<TurnRecord>,
}

impl CustomCtx<'_> {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, index: usize) -> &ResolvedAgent {
        &self.agents[index]
    }

    pub fn cycles(&self) -> u32 {
        self.cycles
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    /// Raw backend access. Any completion made here must be recorded with
    /// [`CustomCtx::record_turn`] or the run fails its trace-completeness
    /// check.
    pub fn backend(&self) -> &dyn Backend {
        self.backend
    }

    pub fn turns(&self) -> &[TurnRecord] {
        &self.turns
    }

    fn next_turn_id(&self) -> String {
        format!("t{}", self.turns.len())
    }

    /// Run one agent turn with the given visible history and record it.
    pub fn take_turn(
        &mut self,
        agent_index: usize,
        cycle_index: u32,
        visible: Vec<HistoryEntry>,
    ) -> Result<&TurnRecord, EngineError> {
        let agent = &self.agents[agent_index];
        let task = agent
            .task
            .as_deref()
            .ok_or_else(|| EngineError::MissingTask(agent.spec.id.clone()))?;
        let id = self.next_turn_id();
        let turn = take_turn(
            &agent.spec,
            agent.system_instructions.as_deref(),
            task,
            &visible,
            self.backend,
            cycle_index,
            &id,
        )?;
        self.turns.push(turn);
        Ok(self.turns.last().expect("just pushed"))
    }

    /// Record a turn produced by a raw backend call.
    pub fn record_turn(&mut self, turn: TurnRecord) {
        self.turns.push(turn);
    }
}

/// Run a structure against a backend with default options and no custom
/// registry.
pub fn process(
    config: &StructureConfig,
    backend: &dyn Backend,
    dataset: Option<&PersonaDataset>,
) -> Result<DeliberationResult, EngineError> {
    process_with(config, backend, dataset, ExecOptions::default(), None)
}

/// Run a structure with explicit options and an optional custom-structure
/// registry.
pub fn process_with(
    config: &StructureConfig,
    backend: &dyn Backend,
    dataset: Option<&PersonaDataset>,
    options: ExecOptions,
    registry: Option<&StructureRegistry>,
) -> Result<DeliberationResult, EngineError> {
    let (trace, result) = process_traced(config, backend, dataset, options, registry);
    result.map(|()| {
        let final_response = trace.final_response.clone();
        let moderated = trace.moderated;
        DeliberationResult {
            responses: trace.turns.clone(),
            final_response,
            moderated,
            trace,
        }
    })
}

/// Like [`process_with`], but always returns a trace: on failure the trace
/// carries the turns completed so far and a failure marker.
pub fn process_traced(
    config: &StructureConfig,
    backend: &dyn Backend,
    dataset: Option<&PersonaDataset>,
    options: ExecOptions,
    registry: Option<&StructureRegistry>,
) -> (DeliberationTrace, Result<(), EngineError>) {
    let counting = CountingBackend::new(backend);
    let mut turns = Vec::new();
    let result = run_all(config, &counting, dataset, options, registry, &mut turns);
    let result = result.and_then(|()| {
        let calls = counting.calls();
        let recorded = turns.len() as u64;
        if calls == recorded {
            Ok(())
        } else {
            Err(EngineError::TraceIncomplete { calls, recorded })
        }
    });
    let moderated = turns.iter().any(|t| t.kind == TurnKind::Moderator);
    let final_response = match result {
        Ok(()) => turns
            .last()
            .map(|t| t.response_text.clone())
            .unwrap_or_default(),
        Err(_) => String::new(),
    };
    let trace = DeliberationTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        config: config.clone(),
        gate: None,
        turns,
        final_response,
        moderated,
        status: if result.is_ok() {
            TraceStatus::Complete
        } else {
            TraceStatus::Failed
        },
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    (trace, result)
}

fn run_all(
    config: &StructureConfig,
    backend: &dyn Backend,
    dataset: Option<&PersonaDataset>,
    options: ExecOptions,
    registry: Option<&StructureRegistry>,
    turns: &mut Vec<TurnRecord>,
) -> Result<(), EngineError> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);

    // Profiles resolve up front, in declaration order, so persona draws are
    // deterministic and independent of execution interleaving.
    let mut resolved = Vec::new();
    for spec in config.variant.agents() {
        let system_instructions = resolve_profile(spec, dataset, &mut rng)?;
        resolved.push(ResolvedAgent {
            spec: spec.clone(),
            system_instructions,
            task: spec.task.clone().or_else(|| config.task.clone()),
        });
    }

    match &config.variant {
        StructureVariant::Ensemble { .. } => {
            run_ensemble(&resolved, config.cycles, backend, options, turns)?
        }
        StructureVariant::Chain {
            shuffle, last_n, ..
        } => run_chain(
            &resolved,
            config.cycles,
            *shuffle,
            *last_n,
            &rng,
            backend,
            turns,
        )?,
        StructureVariant::Debate { last_n, .. } => {
            run_debate(&resolved, config.cycles, *last_n, backend, turns)?
        }
        StructureVariant::Graph { edges, .. } => {
            run_graph(&resolved, edges, backend, options, turns)?
        }
        StructureVariant::Custom { name, .. } => {
            let executor = registry
                .and_then(|r| r.get(name))
                .ok_or_else(|| EngineError::UnknownStructure(name.clone()))?
                .clone();
            let mut ctx = CustomCtx {
                agents: &resolved,
                cycles: config.cycles,
                backend,
                rng: rng.derive(CUSTOM_STREAM),
                turns: std::mem::take(turns),
            };
            let result = executor.execute(&mut ctx);
            *turns = ctx.turns;
            result?
        }
    }

    if let Some(moderator_spec) = &config.moderator {
        moderator::run_moderator(moderator_spec, config.task.as_deref(), backend, turns)?;
    }
    Ok(())
}

/// Run one stage of independent turns. With `parallel`, turns execute on
/// scoped threads; results are joined in plan order either way.
fn run_stage<F>(count: usize, parallel: bool, produce: F) -> Result<Vec<TurnRecord>, EngineError>
where
    F: Fn(usize) -> Result<TurnRecord, EngineError> + Sync,
{
    if parallel && count > 1 {
        std::thread::scope(|scope| {
            let produce = &produce;
            let handles: Vec<_> = (0..count)
                .map(|i| scope.spawn(move || produce(i)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("turn thread panicked"))
                .collect()
        })
    } else {
        (0..count).map(produce).collect()
    }
}

fn run_ensemble(
    agents: &[ResolvedAgent],
    cycles: u32,
    backend: &dyn Backend,
    options: ExecOptions,
    turns: &mut Vec<TurnRecord>,
) -> Result<(), EngineError> {
    for cycle in 0..cycles {
        let base = turns.len();
        let stage = run_stage(agents.len(), options.parallel, |i| {
            let agent = &agents[i];
            let task = agent
                .task
                .as_deref()
                .ok_or_else(|| EngineError::MissingTask(agent.spec.id.clone()))?;
            take_turn(
                &agent.spec,
                agent.system_instructions.as_deref(),
                task,
                &[],
                backend,
                cycle,
                &format!("t{}", base + i),
            )
        })?;
        turns.extend(stage);
    }
    Ok(())
}

fn run_chain(
    agents: &[ResolvedAgent],
    cycles: u32,
    shuffle: bool,
    last_n: Option<u32>,
    rng: &SeededRng,
    backend: &dyn Backend,
    turns: &mut Vec<TurnRecord>,
) -> Result<(), EngineError> {
    let ids: Vec<String> = agents.iter().map(|a| a.spec.id.clone()).collect();
    let by_id: BTreeMap<&str, &ResolvedAgent> =
        agents.iter().map(|a| (a.spec.id.as_str(), a)).collect();
    for cycle in 0..cycles {
        for agent_id in chain_order(&ids, cycle, shuffle, rng) {
            let agent = by_id[agent_id.as_str()];
            let visible: Vec<HistoryEntry> = visible_turns(&VisibilityRule::Window, turns, last_n)
                .into_iter()
                .map(|turn| {
                    // An agent's own prior turns are flagged; others stay
                    // anonymous.
                    if turn.agent_id == agent.spec.id {
                        HistoryEntry::tagged(turn, "You")
                    } else {
                        HistoryEntry::from_turn(turn)
                    }
                })
                .collect();
            let task = agent
                .task
                .as_deref()
                .ok_or_else(|| EngineError::MissingTask(agent.spec.id.clone()))?;
            let id = format!("t{}", turns.len());
            let turn = take_turn(
                &agent.spec,
                agent.system_instructions.as_deref(),
                task,
                &visible,
                backend,
                cycle,
                &id,
            )?;
            turns.push(turn);
        }
    }
    Ok(())
}

fn run_debate(
    agents: &[ResolvedAgent],
    cycles: u32,
    last_n: Option<u32>,
    backend: &dyn Backend,
    turns: &mut Vec<TurnRecord>,
) -> Result<(), EngineError> {
    for cycle in 0..cycles {
        // agents has exactly two entries (validated); agent_a speaks first
        // every cycle.
        for agent in agents {
            let visible: Vec<HistoryEntry> = visible_turns(&VisibilityRule::Window, turns, last_n)
                .into_iter()
                .map(|turn| {
                    if turn.agent_id == agent.spec.id {
                        HistoryEntry::tagged(turn, "You")
                    } else {
                        HistoryEntry::tagged(turn, "Other")
                    }
                })
                .collect();
            let task = agent
                .task
                .as_deref()
                .ok_or_else(|| EngineError::MissingTask(agent.spec.id.clone()))?;
            let id = format!("t{}", turns.len());
            let turn = take_turn(
                &agent.spec,
                agent.system_instructions.as_deref(),
                task,
                &visible,
                backend,
                cycle,
                &id,
            )?;
            turns.push(turn);
        }
    }
    Ok(())
}

fn run_graph(
    agents: &[ResolvedAgent],
    edges: &[(String, String)],
    backend: &dyn Backend,
    options: ExecOptions,
    turns: &mut Vec<TurnRecord>,
) -> Result<(), EngineError> {
    let ids: Vec<String> = agents.iter().map(|a| a.spec.id.clone()).collect();
    let topo = topological_order(&ids, edges)?;
    let by_id: BTreeMap<&str, &ResolvedAgent> =
        agents.iter().map(|a| (a.spec.id.as_str(), a)).collect();
    let mut predecessors: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (from, to) in edges {
        predecessors
            .entry(to.as_str())
            .or_default()
            .insert(from.clone());
    }

    for stage in &topo.stages {
        let base = turns.len();
        let history: &[TurnRecord] = turns;
        let stage_turns = run_stage(stage.len(), options.parallel, |i| {
            let agent = by_id[stage[i].as_str()];
            let empty = BTreeSet::new();
            let preds = predecessors.get(stage[i].as_str()).unwrap_or(&empty);
            let rule = VisibilityRule::Predecessors(preds.clone());
            let visible: Vec<HistoryEntry> = visible_turns(&rule, history, None)
                .into_iter()
                .map(HistoryEntry::from_turn)
                .collect();
            let task = agent
                .task
                .as_deref()
                .ok_or_else(|| EngineError::MissingTask(agent.spec.id.clone()))?;
            take_turn(
                &agent.spec,
                agent.system_instructions.as_deref(),
                task,
                &visible,
                backend,
                0,
                &format!("t{}", base + i),
            )
        })?;
        turns.extend(stage_turns);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn agents(n: usize) -> Vec<AgentSpec> {
        (0..n)
            .map(|i| AgentSpec::new(format!("agent_{i}"), "mock-model"))
            .collect()
    }

    fn mock() -> MockBackend {
        MockBackend::hash_echo()
    }

    #[test]
    fn ensemble_is_isolated() {
        let config = StructureConfig::new(StructureVariant::Ensemble { agents: agents(3) })
            .with_task("brainstorm");
        let result = process(&config, &mock(), None).unwrap();
        assert_eq!(result.responses.len(), 3);
        for turn in &result.responses {
            assert!(turn.visible_turn_ids.is_empty());
            assert_eq!(turn.user_prompt_sent, "brainstorm");
        }
    }

    #[test]
    fn agent_task_overrides_structure_task() {
        let mut pair = agents(2);
        pair[1].task = Some("the override".into());
        let config = StructureConfig::new(StructureVariant::Ensemble { agents: pair })
            .with_task("the inherited task");
        let result = process(&config, &mock(), None).unwrap();
        assert_eq!(result.responses[0].user_prompt_sent, "the inherited task");
        assert_eq!(result.responses[1].user_prompt_sent, "the override");
    }

    #[test]
    fn multicycle_moderated_ensemble() {
        use crate::moderator::{ModeratorProfile, ModeratorSpec};
        let config = StructureConfig::new(StructureVariant::Ensemble { agents: agents(2) })
            .with_cycles(2)
            .with_task("brainstorm")
            .with_moderator(
                ModeratorSpec::new("mock-model")
                    .with_profile(ModeratorProfile::Direct("You summarize.".into())),
            );
        let result = process(&config, &mock(), None).unwrap();
        // Each cycle re-runs all agents in isolation; the moderator sees
        // every cycle's turns.
        assert_eq!(result.responses.len(), 5);
        let moderator = result.responses.last().unwrap();
        assert_eq!(moderator.kind, TurnKind::Moderator);
        assert_eq!(moderator.visible_turn_ids.len(), 4);
        for turn in result.trace.agent_turns() {
            assert!(turn.visible_turn_ids.is_empty());
            assert!(moderator.user_prompt_sent.contains(&turn.response_text));
        }
        assert_eq!(result.final_response, moderator.response_text);
    }

    #[test]
    fn chain_sees_growing_window() {
        let config = StructureConfig::new(StructureVariant::Chain {
            agents: agents(3),
            shuffle: false,
            last_n: None,
        })
        .with_task("build");
        let result = process(&config, &mock(), None).unwrap();
        assert_eq!(result.responses.len(), 3);
        for (i, turn) in result.responses.iter().enumerate() {
            assert_eq!(turn.visible_turn_ids.len(), i);
        }
    }

    #[test]
    fn chain_window_is_bounded_by_last_n() {
        let config = StructureConfig::new(StructureVariant::Chain {
            agents: agents(3),
            shuffle: false,
            last_n: Some(1),
        })
        .with_cycles(2)
        .with_task("build");
        let result = process(&config, &mock(), None).unwrap();
        assert_eq!(result.responses.len(), 6);
        for (i, turn) in result.responses.iter().enumerate() {
            assert_eq!(turn.visible_turn_ids.len(), usize::from(i > 0));
            if i > 0 {
                assert_eq!(turn.visible_turn_ids[0], format!("t{}", i - 1));
            }
        }
    }

    #[test]
    fn debate_alternates() {
        let config = StructureConfig::new(StructureVariant::Debate {
            agents: agents(2),
            last_n: None,
        })
        .with_cycles(2)
        .with_task("argue");
        let result = process(&config, &mock(), None).unwrap();
        let speakers: Vec<&str> = result
            .responses
            .iter()
            .map(|t| t.agent_id.as_str())
            .collect();
        assert_eq!(speakers, vec!["agent_0", "agent_1", "agent_0", "agent_1"]);
    }

    #[test]
    fn debate_requires_two_agents() {
        let config = StructureConfig::new(StructureVariant::Debate {
            agents: agents(3),
            last_n: None,
        })
        .with_task("argue");
        let err = process(&config, &mock(), None).unwrap_err();
        assert!(err.to_string().contains("exactly two agents"));
    }

    #[test]
    fn graph_sees_direct_predecessors_only() {
        let mut graph_agents = agents(4);
        for a in &mut graph_agents {
            a.task = Some(format!("task for {}", a.id));
        }
        // agent_0 -> agent_1 -> agent_3, agent_0 -> agent_2 -> agent_3
        let config = StructureConfig::new(StructureVariant::Graph {
            agents: graph_agents,
            edges: vec![
                ("agent_0".into(), "agent_1".into()),
                ("agent_0".into(), "agent_2".into()),
                ("agent_1".into(), "agent_3".into()),
                ("agent_2".into(), "agent_3".into()),
            ],
        });
        let result = process(&config, &mock(), None).unwrap();
        let by_agent: BTreeMap<&str, &TurnRecord> = result
            .responses
            .iter()
            .map(|t| (t.agent_id.as_str(), t))
            .collect();
        assert!(by_agent["agent_0"].visible_turn_ids.is_empty());
        assert_eq!(by_agent["agent_1"].visible_turn_ids, vec!["t0"]);
        assert_eq!(by_agent["agent_2"].visible_turn_ids, vec!["t0"]);
        // agent_3 sees its two direct predecessors, never agent_0
        // transitively.
        let final_visible = &by_agent["agent_3"].visible_turn_ids;
        assert_eq!(final_visible.len(), 2);
        assert!(!final_visible.contains(&"t0".to_string()));
    }

    #[test]
    fn graph_rejects_cycles() {
        let config = StructureConfig::new(StructureVariant::Graph {
            agents: agents(2),
            edges: vec![
                ("agent_0".into(), "agent_1".into()),
                ("agent_1".into(), "agent_0".into()),
            ],
        })
        .with_task("t");
        assert!(matches!(
            process(&config, &mock(), None),
            Err(EngineError::CycleDetected(_))
        ));
    }

    #[test]
    fn graph_parallel_and_sequential_traces_match() {
        let mut graph_agents = agents(5);
        for a in &mut graph_agents {
            a.task = Some("critique".into());
        }
        let config = StructureConfig::new(StructureVariant::Graph {
            agents: graph_agents,
            edges: vec![
                ("agent_0".into(), "agent_1".into()),
                ("agent_0".into(), "agent_2".into()),
                ("agent_0".into(), "agent_3".into()),
                ("agent_1".into(), "agent_4".into()),
                ("agent_2".into(), "agent_4".into()),
                ("agent_3".into(), "agent_4".into()),
            ],
        })
        .with_seed(9);
        let parallel =
            process_with(&config, &mock(), None, ExecOptions { parallel: true }, None).unwrap();
        let sequential = process_with(
            &config,
            &mock(),
            None,
            ExecOptions { parallel: false },
            None,
        )
        .unwrap();
        let mut a = parallel.trace;
        let mut b = sequential.trace;
        a.zero_timing();
        b.zero_timing();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_is_seeded_and_per_cycle() {
        let ids: Vec<String> = (0..5).map(|i| format!("a{i}")).collect();
        let rng = SeededRng::new(123);
        let c0 = chain_order(&ids, 0, true, &rng);
        let c1 = chain_order(&ids, 1, true, &rng);
        let c0_again = chain_order(&ids, 0, true, &rng);
        assert_eq!(c0, c0_again);
        assert_ne!(c0, c1); // 1/120 chance of collision under a broken seed scheme
        assert_eq!(chain_order(&ids, 7, false, &rng), ids);
    }

    #[test]
    fn unknown_custom_structure_errors() {
        let config = StructureConfig::new(StructureVariant::Custom {
            name: "nope".into(),
            agents: agents(1),
        })
        .with_task("t");
        assert!(matches!(
            process(&config, &mock(), None),
            Err(EngineError::UnknownStructure(name)) if name == "nope"
        ));
    }

    #[test]
    fn registry_rejects_duplicates() {
        struct Noop;
        impl CustomExecutor for Noop {
            fn execute(&self, _ctx: &mut CustomCtx<'_>) -> Result<(), EngineError> {
                Ok(())
            }
        }
        let mut registry = StructureRegistry::new();
        registry.register("mine", Arc::new(Noop)).unwrap();
        assert!(matches!(
            registry.register("mine", Arc::new(Noop)),
            Err(EngineError::DuplicateName(_))
        ));
    }

    #[test]
    fn unrecorded_backend_call_fails_completeness() {
        struct Sneaky;
        impl CustomExecutor for Sneaky {
            fn execute(&self, ctx: &mut CustomCtx<'_>) -> Result<(), EngineError> {
                let request = crate::backend::ModelRequest::new("mock-model", "off the record");
                ctx.backend()
                    .complete(&request)
                    .map_err(|e| EngineError::for_agent("sneaky", e))?;
                Ok(())
            }
        }
        let mut registry = StructureRegistry::new();
        registry.register("sneaky", Arc::new(Sneaky)).unwrap();
        let config = StructureConfig::new(StructureVariant::Custom {
            name: "sneaky".into(),
            agents: agents(1),
        })
        .with_task("t");
        let err = process_with(
            &config,
            &mock(),
            None,
            ExecOptions::default(),
            Some(&registry),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            EngineError::TraceIncomplete {
                calls: 1,
                recorded: 0
            }
        ));
    }

    #[test]
    fn visible_turns_window_examples() {
        let history: Vec<TurnRecord> = (0..5)
            .map(|i| TurnRecord {
                id: format!("t{i}"),
                kind: TurnKind::Agent,
                agent_id: format!("a{i}"),
                cycle_index: 0,
                system_instructions_sent: None,
                user_prompt_sent: String::new(),
                visible_turn_ids: vec![],
                response_text: String::new(),
                model_id: "m".into(),
                timestamp_ms: 0,
                latency_ms: 0,
                attempt_count: 1,
            })
            .collect();
        let window = visible_turns(&VisibilityRule::Window, &history, Some(2));
        assert_eq!(
            window.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(),
            vec!["t3", "t4"]
        );
        assert!(visible_turns(&VisibilityRule::Isolated, &history, None).is_empty());
        let preds: BTreeSet<String> = ["a1".to_string(), "a3".to_string()].into();
        let visible = visible_turns(&VisibilityRule::Predecessors(preds), &history, None);
        assert_eq!(
            visible.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(),
            vec!["t1", "t3"]
        );
    }
}
