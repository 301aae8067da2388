//! Ensemblage builds and executes simulated social ensembles: groups of
//! persona-bearing language-model agents that deliberate inside
//! configurable information-sharing structures, optionally summarized or
//! gated by moderators, with every run emitting a deterministic, auditable
//! trace.
//!
//! The pieces:
//!
//! - [`backend`]: one completion interface over live providers (an
//!   OpenAI-compatible adapter) and a deterministic mock for offline runs.
//! - [`persona`]: weighted survey rows plus a codebook, sampled in
//!   proportion to their survey weights and rendered into persona text.
//! - [`template`]: placeholder templates and the built-in registry of
//!   persona, combination, and moderator instructions.
//! - [`agent`]: one deliberating entity: profile, task, combination
//!   instructions, model binding; executes single turns.
//! - [`structures`]: Ensemble, Chain, Debate, and Graph protocols, plus a
//!   registry for custom structures.
//! - [`moderator`]: aggregation of a deliberation into a final response,
//!   auto-moderators, and the steerable accept/reject gate.
//! - [`metrics`]: lexical diversity (n-gram TTR and HD-D) for comparing
//!   response corpora.
//! - [`trace`]: the replayable audit record every run emits.
//! - [`config`]: declarative run files, validation, and run execution.
//!
//! # Quick start
//!
//! ```
//! use ensemblage::agent::AgentSpec;
//! use ensemblage::backend::MockBackend;
//! use ensemblage::structures::{process, StructureConfig, StructureVariant};
//!
//! let agents = (0..3)
//!     .map(|i| AgentSpec::new(format!("citizen_{i}"), "mock-model"))
//!     .collect();
//! let config = StructureConfig::new(StructureVariant::Ensemble { agents })
//!     .with_task("Suggest one way to encourage recycling.")
//!     .with_seed(7);
//! let result = process(&config, &MockBackend::hash_echo(), None).unwrap();
//! assert_eq!(result.responses.len(), 3);
//! ```

pub mod agent;
pub mod backend;
pub mod config;
mod error;
pub mod metrics;
pub mod moderator;
pub mod persona;
pub mod rng;
pub mod structures;
pub mod template;
pub mod trace;

pub use error::EngineError;

// The guide's code blocks compile and run as doctests against this crate,
// so the book cannot drift from the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(agents, "../../../book/src/agents.md");
    chapter!(personas, "../../../book/src/personas.md");
    chapter!(templates, "../../../book/src/templates.md");
    chapter!(structures, "../../../book/src/structures.md");
    chapter!(moderators, "../../../book/src/moderators.md");
    chapter!(metrics, "../../../book/src/metrics.md");
    chapter!(traces, "../../../book/src/traces.md");
    chapter!(cli, "../../../book/src/cli.md");
}
