//! Deterministic mock backend.
//!
//! Every structural property of the engine is testable offline against this
//! backend. Three modes:
//!
//! - **scripted**: exact-match map from user message to reply, with an
//!   optional fallback.
//! - **hash echo**: replies with a digest tag plus a prefix of the prompt it
//!   saw, so a test can prove what an agent was shown.
//! - **sequence**: replies with pre-baked items in order and errors when the
//!   list runs out.
//!
//! The hash-echo reply format is frozen (golden-tested) because structure
//! tests parse it:
//!
//! ```text
//! [echo 0123456789abcdef] <first 40 chars of the user message>
//! ```
//!
//! The 16-hex tag digests the model id, system instructions, and the full
//! user message, so distinct requests get distinct replies.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use super::{Backend, BackendError, ModelRequest, ModelResponse};

/// Number of user-message characters echoed back in hash-echo mode.
pub const HASH_ECHO_PREFIX_LEN: usize = 40;

enum Mode {
    Scripted {
        script: BTreeMap<String, String>,
        fallback: Option<String>,
    },
    HashEcho,
    Sequence {
        items: Vec<String>,
        next: Mutex<usize>,
    },
}

pub struct MockBackend {
    mode: Mode,
}

impl MockBackend {
    /// Exact-match script over user messages.
    pub fn scripted(script: BTreeMap<String, String>, fallback: Option<String>) -> Self {
        MockBackend {
            mode: Mode::Scripted { script, fallback },
        }
    }

    pub fn hash_echo() -> Self {
        MockBackend {
            mode: Mode::HashEcho,
        }
    }

    pub fn sequence(items: Vec<String>) -> Self {
        MockBackend {
            mode: Mode::Sequence {
                items,
                next: Mutex::new(0),
            },
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

fn hash_echo_text(request: &ModelRequest) -> String {
    let mut buf = Vec::new();
    buf.extend_from_slice(request.model_id.as_bytes());
    buf.push(0x1f);
    if let Some(sys) = &request.system_instructions {
        buf.extend_from_slice(sys.as_bytes());
    }
    buf.push(0x1f);
    buf.extend_from_slice(request.user_message.as_bytes());
    let tag = fnv1a64(&buf);
    let prefix: String = request
        .user_message
        .chars()
        .take(HASH_ECHO_PREFIX_LEN)
        .collect();
    format!("[echo {tag:016x}] {prefix}")
}

impl Backend for MockBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let text = match &self.mode {
            Mode::Scripted { script, fallback } => match script.get(&request.user_message) {
                Some(reply) => reply.clone(),
                None => fallback.clone().ok_or_else(|| {
                    let head: String = request.user_message.chars().take(40).collect();
                    BackendError::ScriptMiss(head)
                })?,
            },
            Mode::HashEcho => hash_echo_text(request),
            Mode::Sequence { items, next } => {
                let mut idx = next.lock().expect("sequence counter poisoned");
                if *idx >= items.len() {
                    return Err(BackendError::SequenceExhausted);
                }
                let item = items[*idx].clone();
                *idx += 1;
                item
            }
        };
        Ok(ModelResponse {
            text: text.trim_end().to_string(),
            model_id: request.model_id.clone(),
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}
