//! Deterministic mock chat backend.
//!
//! A response is a pure function of the prompt hash and the scripted fixture
//! table: if the hash has fixtures, successive calls walk the fixture list
//! (last entry repeats); otherwise a canned, format-valid structure for the
//! request's tag is synthesized from the prompt text. Simulated latency is
//! derived from prompt and response lengths so repeated runs report the same
//! accounting.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::discourse::intra;
use crate::llm::{BackendReply, CallTag, ChatBackend, LlmError, LlmRequest};
use crate::text::fnv1a64;

/// Stable fixture key: SHA-256 over system prompt, a separator, and user
/// prompt.
pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system.as_bytes());
    hasher.update([0x1f]);
    hasher.update(user.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub tag: CallTag,
    pub prompt_hash: String,
    pub user_prompt: String,
}

#[derive(Default)]
pub struct MockBackend {
    fixtures: HashMap<String, Vec<String>>,
    counters: Mutex<HashMap<String, usize>>,
    recording: bool,
    requests: Mutex<Vec<RecordedRequest>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureValue {
    One(String),
    Many(Vec<String>),
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps a log of every request for test assertions.
    pub fn with_recording(mut self) -> Self {
        self.recording = true;
        self
    }

    /// Loads a fixture file: a JSON object mapping prompt hash to either a
    /// response string or an array of responses consumed in call order.
    pub fn from_fixture_file(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            LlmError::Config(format!("cannot read fixture file {}: {e}", path.display()))
        })?;
        let table: HashMap<String, FixtureValue> = serde_json::from_str(&raw).map_err(|e| {
            LlmError::Config(format!("malformed fixture file {}: {e}", path.display()))
        })?;
        let mut backend = Self::new();
        for (key, value) in table {
            let responses = match value {
                FixtureValue::One(s) => vec![s],
                FixtureValue::Many(v) => v,
            };
            backend.fixtures.insert(key, responses);
        }
        Ok(backend)
    }

    pub fn add_fixture_hash(&mut self, hash: &str, responses: Vec<String>) {
        self.fixtures.insert(hash.to_string(), responses);
    }

    /// Registers fixtures for an exact (system, user) prompt pair.
    pub fn add_fixture_for(&mut self, system: &str, user: &str, responses: Vec<String>) {
        self.add_fixture_hash(&prompt_hash(system, user), responses);
    }

    pub fn recorded(&self) -> Vec<RecordedRequest> {
        self.requests.lock().expect("mock poisoned").clone()
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, req: &LlmRequest) -> Result<BackendReply, LlmError> {
        let hash = prompt_hash(&req.system_prompt, &req.user_prompt);
        if self.recording {
            self.requests.lock().expect("mock poisoned").push(RecordedRequest {
                tag: req.tag,
                prompt_hash: hash.clone(),
                user_prompt: req.user_prompt.clone(),
            });
        }
        let text = if let Some(responses) = self.fixtures.get(&hash) {
            let mut counters = self.counters.lock().expect("mock poisoned");
            let count = counters.entry(hash.clone()).or_insert(0);
            let text = responses[(*count).min(responses.len() - 1)].clone();
            *count += 1;
            text
        } else {
            canned_response(req, &hash)
        };
        let simulated =
            (req.system_prompt.len() + req.user_prompt.len() + text.len()) as u64 / 64;
        Ok(BackendReply {
            text,
            simulated_latency_ms: Some(simulated),
        })
    }
}

/// The text the prompt asked to analyze: everything after the last
/// `TEXT TO ANALYZE` marker, or the whole prompt when absent.
fn analyzed_text(user_prompt: &str) -> &str {
    let tail = user_prompt
        .rsplit("TEXT TO ANALYZE")
        .next()
        .unwrap_or(user_prompt);
    tail.trim_start_matches(':').trim()
}

fn query_line(user_prompt: &str) -> &str {
    analyzed_text(user_prompt)
        .lines()
        .find_map(|l| l.trim().strip_prefix("QUERY:"))
        .map(str::trim)
        .unwrap_or("the question")
}

fn chunk_count(user_prompt: &str) -> usize {
    let re = crate::prompts::chunk_index_re();
    re.captures_iter(analyzed_text(user_prompt))
        .filter_map(|c| c[1].parse::<usize>().ok())
        .max()
        .unwrap_or(0)
}

const GRAPH_LABELS: [&str; 20] = [
    "SUPPORTS",
    "CONTRADICTS",
    "ELABORATES",
    "EXEMPLIFIES",
    "CAUSES",
    "RESULTS_FROM",
    "ENABLES",
    "PREVENTS",
    "PRECEDES",
    "FOLLOWS",
    "SIMULTANEOUS",
    "BACKGROUND_FOR",
    "GENERALIZES",
    "SPECIFIES",
    "COMPARES_WITH",
    "CONTRASTS_WITH",
    "SUPPLEMENTS",
    "REPLACES",
    "MOTIVATES",
    "JUSTIFIES",
];

const MARKERS: [&str; 13] = [
    "however",
    "but",
    "although",
    "in contrast",
    "therefore",
    "because",
    "as a result",
    "meanwhile",
    "moreover",
    "furthermore",
    "for example",
    "for instance",
    "in addition",
];

fn canned_response(req: &LlmRequest, hash: &str) -> String {
    match req.tag {
        CallTag::RstParse => canned_rst(req),
        CallTag::Graph => canned_pairwise(req, hash, |h| {
            if h % 4 == 0 {
                GRAPH_LABELS[(h / 7) as usize % GRAPH_LABELS.len()].to_string()
            } else {
                "UNRELATED".to_string()
            }
        }),
        // The markers tag covers both the marker-inference call and the
        // markers baseline's answer call; the inference prompt is the one
        // carrying the marker list.
        CallTag::Markers if req.user_prompt.contains("Discourse marker list:") => {
            canned_pairwise(req, hash, |h| {
                if h % 5 == 0 {
                    MARKERS[(h / 11) as usize % MARKERS.len()].to_string()
                } else {
                    "NONE".to_string()
                }
            })
        }
        CallTag::Markers => format!("ANSWER: {}", canned_answer_body(req)),
        CallTag::Plan => concat!(
            "PLAN: Open with the finding that answers the question most directly. ",
            "Then integrate supporting and contrasting evidence following the rhetorical graph. ",
            "Close with a synthesis that resolves any remaining tension."
        )
        .to_string(),
        CallTag::Judge => format!("Score: {}", 50 + fnv1a64(req.user_prompt.as_bytes()) % 51),
        CallTag::RetrieveAndPlan => format!(
            "PLAN: Summarize the strongest evidence first, then answer directly.\nANSWER: {}",
            canned_answer_body(req)
        ),
        CallTag::PlanAndRetrieve => {
            if analyzed_text(&req.user_prompt).contains("CHUNKS:") {
                format!("ANSWER: {}", canned_answer_body(req))
            } else {
                let q = query_line(&req.user_prompt);
                format!(
                    "PLAN: Identify the evidence the question needs and outline the answer.\nRETRIEVAL HINT:\n- {q}\n- background for {q}"
                )
            }
        }
        CallTag::Generate | CallTag::FullContext | CallTag::StandardRag => {
            format!("ANSWER: {}", canned_answer_body(req))
        }
    }
}

fn canned_answer_body(req: &LlmRequest) -> String {
    let q = query_line(&req.user_prompt);
    format!("Considering the provided evidence as a whole, the answer to \"{q}\" follows from the most directly relevant passages, read in their discourse context.")
}

fn canned_rst(req: &LlmRequest) -> String {
    let text = analyzed_text(&req.user_prompt);
    let text = if text.is_empty() {
        "Mock evidence sentence one. Mock evidence sentence two."
    } else {
        text
    };
    match intra::right_branching_tree("mock", text) {
        Ok(tree) => intra::serialize_tree(&tree).unwrap_or_else(|_| fallback_transcript()),
        Err(_) => fallback_transcript(),
    }
}

fn fallback_transcript() -> String {
    concat!(
        "EDUs:\n[1] Mock evidence sentence one.\n[2] Mock evidence sentence two.\n",
        "RST ANALYSIS:\nRELATION(EDU_2, EDU_1): {ELABORATION}\n",
        "TREE STRUCTURE:\nROOT[1-2]\n|--- NUCLEUS[1] Mock evidence sentence one. (N)\n",
        "|--- SATELLITE[2] Mock evidence sentence two. (S): {ELABORATION}\n"
    )
    .to_string()
}

fn canned_pairwise(req: &LlmRequest, hash: &str, label_for: impl Fn(u64) -> String) -> String {
    let k = chunk_count(&req.user_prompt).max(2);
    let mut lines = Vec::with_capacity(k * (k - 1));
    for i in 1..=k {
        for j in 1..=k {
            if i == j {
                continue;
            }
            let h = fnv1a64(format!("{hash}|{i}|{j}").as_bytes());
            lines.push(format!("CHUNK[{i}] -> CHUNK[{j}]: {{{}}}", label_for(h)));
        }
    }
    lines.join("\n")
}
