//! Backend-agnostic chat-completion client with retry-with-repair and
//! per-call token/latency accounting.
//!
//! Every physical call lands in the [`UsageLedger`] tagged by query and call
//! purpose; report accounting is derived from the ledger, never estimated.
//! Token counts use the corpus module's default tokenizer over prompt and
//! completion text, so they are backend-independent and reproducible (a model
//! tokenizer would count differently; accounting is self-consistent either
//! way because the same rule is applied everywhere).

mod http;
mod mock;

pub use http::HttpBackend;
pub use mock::{prompt_hash, MockBackend, RecordedRequest};

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::tokenize;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no backend registered under id {0:?}")]
    UnknownBackend(String),
    #[error("backend returned an empty completion for tag {tag}")]
    EmptyCompletion { tag: CallTag },
    #[error("transport failure after {elapsed_ms} ms: {reason}")]
    Transport { reason: String, elapsed_ms: u64 },
    #[error("structured output still invalid after {attempts} attempts: {last_violation}")]
    Exhausted {
        attempts: u32,
        last_violation: String,
        last_raw: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Purpose of an LLM call; the closed set used for ledger bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallTag {
    RstParse,
    Graph,
    Plan,
    Generate,
    Judge,
    FullContext,
    StandardRag,
    RetrieveAndPlan,
    PlanAndRetrieve,
    Markers,
}

impl std::fmt::Display for CallTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CallTag::RstParse => "rst_parse",
            CallTag::Graph => "graph",
            CallTag::Plan => "plan",
            CallTag::Generate => "generate",
            CallTag::Judge => "judge",
            CallTag::FullContext => "full_context",
            CallTag::StandardRag => "standard_rag",
            CallTag::RetrieveAndPlan => "retrieve_and_plan",
            CallTag::PlanAndRetrieve => "plan_and_retrieve",
            CallTag::Markers => "markers",
        };
        f.write_str(s)
    }
}

/// Decoding settings forwarded opaquely to the backend. The mock ignores
/// them; the HTTP backend serializes them into the request body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam_width: Option<u32>,
    pub max_output_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            beam_width: Some(3),
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub backend_id: String,
    pub query_id: String,
    pub tag: CallTag,
    pub system_prompt: String,
    pub user_prompt: String,
    pub decode: DecodeParams,
}

impl LlmRequest {
    pub fn new(backend_id: &str, query_id: &str, tag: CallTag, user_prompt: String) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            query_id: query_id.to_string(),
            tag,
            system_prompt: String::new(),
            user_prompt,
            decode: DecodeParams::default(),
        }
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.decode.max_output_tokens = n;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LlmResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub attempt: u32,
}

/// What a backend returns. Backends that simulate time (the mock) report a
/// deterministic latency so full-pipeline artifacts are byte-identical across
/// runs; otherwise the client measures wall-clock.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub simulated_latency_ms: Option<u64>,
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &LlmRequest) -> Result<BackendReply, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub query_id: String,
    pub tag: CallTag,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
}

/// Append-only log of every physical LLM call.
#[derive(Debug, Default)]
pub struct UsageLedger {
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageLedger {
    pub fn append(&self, record: UsageRecord) {
        self.records.lock().expect("ledger poisoned").push(record);
    }

    pub fn snapshot(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger poisoned").clone()
    }

    pub fn query_records(&self, query_id: &str) -> Vec<UsageRecord> {
        self.records
            .lock()
            .expect("ledger poisoned")
            .iter()
            .filter(|r| r.query_id == query_id)
            .cloned()
            .collect()
    }

    pub fn query_totals(&self, query_id: &str) -> UsageTotals {
        let mut t = UsageTotals::default();
        for r in self.query_records(query_id) {
            t.calls += 1;
            t.input_tokens += r.input_tokens;
            t.output_tokens += r.output_tokens;
            t.latency_ms += r.latency_ms;
        }
        t
    }

    pub fn count_tag(&self, tag: CallTag) -> usize {
        self.records
            .lock()
            .expect("ledger poisoned")
            .iter()
            .filter(|r| r.tag == tag)
            .count()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("ledger poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore poisoned") += 1;
        self.sem.cv.notify_one();
    }
}

/// Registry of chat backends plus the shared usage ledger.
pub struct LlmClient {
    backends: HashMap<String, Arc<dyn ChatBackend>>,
    ledger: Arc<UsageLedger>,
    throttle: Semaphore,
}

impl LlmClient {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            backends: HashMap::new(),
            ledger: Arc::new(UsageLedger::default()),
            throttle: Semaphore::new(max_in_flight),
        }
    }

    pub fn register(&mut self, id: &str, backend: Arc<dyn ChatBackend>) {
        self.backends.insert(id.to_string(), backend);
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    /// Issues one completion, records usage, and rejects empty completions.
    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let backend = self
            .backends
            .get(&req.backend_id)
            .ok_or_else(|| LlmError::UnknownBackend(req.backend_id.clone()))?
            .clone();
        let _permit = self.throttle.acquire();
        let started = Instant::now();
        let reply = backend.send(req)?;
        let latency_ms = reply
            .simulated_latency_ms
            .unwrap_or_else(|| started.elapsed().as_millis() as u64);
        // The call happened and cost tokens, so it is ledgered even when the
        // completion is rejected as empty.
        let input_tokens =
            (tokenize(&req.system_prompt).len() + tokenize(&req.user_prompt).len()) as u64;
        let output_tokens = tokenize(&reply.text).len() as u64;
        self.ledger.append(UsageRecord {
            query_id: req.query_id.clone(),
            tag: req.tag,
            input_tokens,
            output_tokens,
            latency_ms,
        });
        if reply.text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion { tag: req.tag });
        }
        Ok(LlmResponse {
            text: reply.text,
            input_tokens,
            output_tokens,
            latency_ms,
            attempt: 1,
        })
    }
}

/// A validated completion plus how many attempts it took.
#[derive(Debug, Clone)]
pub struct Retried<T> {
    pub value: T,
    pub attempts: u32,
    pub response: LlmResponse,
}

/// The prompt a repair retry sends: the original request plus the violation.
pub fn repair_prompt(base_user_prompt: &str, violation: &str) -> String {
    format!(
        "{base_user_prompt}\n\nYour previous output violated the required format: {violation}\nRe-emit the complete output in exactly the required format."
    )
}

/// Calls the backend, validates the completion, and on validation failure
/// re-issues the request with the violation appended, up to `max_attempts`.
pub fn run_with_retry<T>(
    client: &LlmClient,
    req: &LlmRequest,
    max_attempts: u32,
    mut validate: impl FnMut(&str) -> Result<T, String>,
) -> Result<Retried<T>, LlmError> {
    if max_attempts == 0 {
        return Err(LlmError::Config("max_attempts must be >= 1".to_string()));
    }
    let mut violation: Option<String> = None;
    let mut last_raw = String::new();
    for attempt in 1..=max_attempts {
        let mut attempt_req = req.clone();
        if let Some(v) = &violation {
            attempt_req.user_prompt = repair_prompt(&req.user_prompt, v);
        }
        // An empty completion is a retryable format violation here; anything
        // else (unknown backend, transport) stays fatal.
        let mut response = match client.complete(&attempt_req) {
            Ok(response) => response,
            Err(LlmError::EmptyCompletion { .. }) => {
                last_raw = String::new();
                violation = Some("completion was empty".to_string());
                continue;
            }
            Err(e) => return Err(e),
        };
        response.attempt = attempt;
        match validate(&response.text) {
            Ok(value) => {
                return Ok(Retried {
                    value,
                    attempts: attempt,
                    response,
                })
            }
            Err(v) => {
                last_raw = response.text.clone();
                violation = Some(v);
            }
        }
    }
    Err(LlmError::Exhausted {
        attempts: max_attempts,
        last_violation: violation.unwrap_or_default(),
        last_raw,
    })
}
