//! Final answer generation: the discourse-guided method and every baseline,
//! each as its own prompt/parse contract.
//!
//! Input sections are rendered under fixed headers (`CHUNKS:`, `RST TREES:`,
//! `RHETORICAL GRAPH:`, `DISCOURSE-AWARE PLAN:`, `DISCOURSE MARKERS:`,
//! `DOCUMENT:`) so tests can assert exactly which sections each method feeds
//! to the model.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunk, Document};
use crate::discourse::inter::{MarkerGraph, RhetoricalGraph};
use crate::discourse::intra::{IntraError, RstTree};
use crate::llm::{run_with_retry, CallTag, LlmClient, LlmError, LlmRequest, Retried};
use crate::planning::{render_plan_inputs, Blueprint, PlanError};
use crate::prompts;
use crate::retrieval::{
    retrieve_topk_scoped, EmbeddingProvider, RetrievalError, ScoredChunk, VectorIndex,
};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no chunks to generate from")]
    EmptyChunks,
    #[error("document text is empty")]
    EmptyDocument,
    #[error("inputs misaligned: {0}")]
    Alignment(String),
    #[error("marker graph is incomplete")]
    IncompleteMarkerGraph,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Tree(#[from] IntraError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Generation strategy. `disco` is the discourse-guided method; the rest are
/// the compared baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Disco,
    FullContext,
    StandardRag,
    RetrieveAndPlan,
    PlanAndRetrieve,
    Markers,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Disco,
        Method::FullContext,
        Method::StandardRag,
        Method::RetrieveAndPlan,
        Method::PlanAndRetrieve,
        Method::Markers,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Disco => "disco",
            Method::FullContext => "full_context",
            Method::StandardRag => "standard_rag",
            Method::RetrieveAndPlan => "retrieve_and_plan",
            Method::PlanAndRetrieve => "plan_and_retrieve",
            Method::Markers => "markers",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let folded = s.trim().to_lowercase().replace('-', "_");
        Self::ALL.iter().copied().find(|m| m.as_str() == folded)
    }

    /// Ledger tag for this method's generation call.
    pub fn tag(&self) -> CallTag {
        match self {
            Method::Disco => CallTag::Generate,
            Method::FullContext => CallTag::FullContext,
            Method::StandardRag => CallTag::StandardRag,
            Method::RetrieveAndPlan => CallTag::RetrieveAndPlan,
            Method::PlanAndRetrieve => CallTag::PlanAndRetrieve,
            Method::Markers => CallTag::Markers,
        }
    }

    pub fn config(&self, top_k: usize) -> MethodConfig {
        let (uses_trees, uses_graph, uses_plan) = match self {
            Method::Disco => (true, true, true),
            Method::FullContext | Method::StandardRag | Method::Markers => (false, false, false),
            Method::RetrieveAndPlan | Method::PlanAndRetrieve => (false, false, true),
        };
        MethodConfig {
            method: *self,
            top_k,
            uses_trees,
            uses_graph,
            uses_plan,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which structural inputs a method consumes. Fixed per method; the markers
/// baseline carries a [`MarkerGraph`] in its graph slot instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub top_k: usize,
    pub uses_trees: bool,
    pub uses_graph: bool,
    pub uses_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerProvenance {
    pub backend_id: String,
    pub attempts: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// The free-form plan of the two-stage baselines, when one was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_plan: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub method: Method,
    pub query_id: String,
    pub provenance: AnswerProvenance,
}

/// Everything an answer call needs besides its inputs.
#[derive(Clone, Copy)]
pub struct GenCtx<'a> {
    pub client: &'a LlmClient,
    pub backend_id: &'a str,
    pub query_id: &'a str,
    pub max_attempts: u32,
    pub max_output_tokens: u32,
}

impl<'a> GenCtx<'a> {
    fn request(&self, tag: CallTag, user: String) -> LlmRequest {
        LlmRequest::new(self.backend_id, self.query_id, tag, user)
            .with_max_output_tokens(self.max_output_tokens)
    }

    fn answer_from(&self, method: Method, outcome: Retried<String>, free_plan: Option<String>) -> Answer {
        Answer {
            text: outcome.value,
            method,
            query_id: self.query_id.to_string(),
            provenance: AnswerProvenance {
                backend_id: self.backend_id.to_string(),
                attempts: outcome.attempts,
                input_tokens: outcome.response.input_tokens,
                output_tokens: outcome.response.output_tokens,
                free_plan,
            },
        }
    }
}

static ANSWER_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bANSWER\b\s*:?").expect("static regex"));
static PLAN_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bPLAN\b\s*:?").expect("static regex"));
static HINT_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bRETRIEVAL\s+HINT\b\s*:?").expect("static regex"));

/// Text after the first ANSWER marker (colon optional, any case).
pub fn extract_answer(raw: &str) -> Result<String, String> {
    let m = ANSWER_MARKER_RE
        .find(raw)
        .ok_or_else(|| "no ANSWER marker in output".to_string())?;
    let body = raw[m.end()..].trim();
    if body.is_empty() {
        return Err("ANSWER body is empty".to_string());
    }
    Ok(body.to_string())
}

/// PLAN then ANSWER, in that order; both non-empty.
fn extract_plan_then_answer(raw: &str) -> Result<(String, String), String> {
    let plan_at = PLAN_MARKER_RE
        .find(raw)
        .ok_or_else(|| "no PLAN marker in output".to_string())?;
    let answer_at = ANSWER_MARKER_RE
        .find(raw)
        .ok_or_else(|| "no ANSWER marker in output".to_string())?;
    if answer_at.start() < plan_at.start() {
        return Err("ANSWER appears before PLAN; expected PLAN first".to_string());
    }
    let plan = raw[plan_at.end()..answer_at.start()].trim().to_string();
    let answer = raw[answer_at.end()..].trim().to_string();
    if plan.is_empty() {
        return Err("PLAN body is empty".to_string());
    }
    if answer.is_empty() {
        return Err("ANSWER body is empty".to_string());
    }
    Ok((plan, answer))
}

/// Stage-1 parse for plan-and-retrieve: the plan plus hint queries. Hint
/// lines tolerate `-`/`*` bullets and `1.`-style numbering; an absent or
/// empty hint block yields an empty list (the caller falls back to the
/// original query).
fn extract_plan_and_hints(raw: &str) -> Result<(String, Vec<String>), String> {
    let plan_at = PLAN_MARKER_RE
        .find(raw)
        .ok_or_else(|| "no PLAN marker in output".to_string())?;
    let hint_at = HINT_MARKER_RE.find(raw);
    let plan_end = hint_at.map(|m| m.start()).unwrap_or(raw.len());
    let plan = raw[plan_at.end()..plan_end.max(plan_at.end())].trim().to_string();
    if plan.is_empty() {
        return Err("PLAN body is empty".to_string());
    }
    let mut hints = Vec::new();
    if let Some(m) = hint_at {
        let hint_end = ANSWER_MARKER_RE
            .find_at(raw, m.end())
            .map(|a| a.start())
            .unwrap_or(raw.len());
        for line in raw[m.end()..hint_end].lines() {
            let line = line.trim();
            let line = line.trim_start_matches(['-', '*', '•']).trim();
            let line = strip_list_number(line);
            if !line.is_empty() {
                hints.push(line.to_string());
            }
        }
    }
    Ok((plan, hints))
}

fn strip_list_number(line: &str) -> &str {
    let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
    if rest.len() < line.len() {
        if let Some(stripped) = rest.strip_prefix(['.', ')']) {
            return stripped.trim();
        }
    }
    line
}

fn base_inputs(query: &str, chunks: &[Chunk]) -> String {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    format!("QUERY: {query}\n\nCHUNKS:\n{}", prompts::chunk_list(&texts))
}

/// Discourse-guided generation conditioned on chunks, trees, graph, and plan.
pub fn answer_disco(
    ctx: GenCtx<'_>,
    query: &str,
    chunks: &[Chunk],
    trees: &[RstTree],
    graph: &RhetoricalGraph,
    plan: &Blueprint,
) -> Result<Answer, GenError> {
    answer_disco_opt(ctx, query, chunks, trees, graph, Some(plan))
}

/// Disco generation with an optional plan section: the plan-omission
/// perturbation renders the same prompt minus the plan.
pub fn answer_disco_opt(
    ctx: GenCtx<'_>,
    query: &str,
    chunks: &[Chunk],
    trees: &[RstTree],
    graph: &RhetoricalGraph,
    plan: Option<&Blueprint>,
) -> Result<Answer, GenError> {
    if chunks.is_empty() {
        return Err(GenError::EmptyChunks);
    }
    if trees.len() != chunks.len() {
        return Err(GenError::Alignment(format!(
            "{} trees for {} chunks",
            trees.len(),
            chunks.len()
        )));
    }
    if graph.k() != chunks.len() {
        return Err(GenError::Alignment(format!(
            "graph over {} nodes for {} chunks",
            graph.k(),
            chunks.len()
        )));
    }
    let mut inputs = render_plan_inputs(query, chunks, trees, graph)?;
    if let Some(plan) = plan {
        inputs.push_str(&format!("\n\nDISCOURSE-AWARE PLAN:\n{}", plan.text));
    }
    let user = prompts::render(prompts::GENERATE_DISCO, &[("inputs", &inputs)])?;
    let req = ctx.request(CallTag::Generate, user);
    let outcome = run_with_retry(ctx.client, &req, ctx.max_attempts, |raw| {
        extract_answer(raw)
    })?;
    Ok(ctx.answer_from(Method::Disco, outcome, None))
}

/// Standard RAG: chunks only.
pub fn answer_standard(ctx: GenCtx<'_>, query: &str, chunks: &[Chunk]) -> Result<Answer, GenError> {
    if chunks.is_empty() {
        return Err(GenError::EmptyChunks);
    }
    let user = prompts::render(prompts::STANDARD_RAG, &[("inputs", &base_inputs(query, chunks))])?;
    let req = ctx.request(CallTag::StandardRag, user);
    let outcome = run_with_retry(ctx.client, &req, ctx.max_attempts, extract_answer)?;
    Ok(ctx.answer_from(Method::StandardRag, outcome, None))
}

/// Zero-retrieval baseline over the whole source document.
pub fn answer_full_context(
    ctx: GenCtx<'_>,
    query: &str,
    document: &Document,
) -> Result<Answer, GenError> {
    if document.text.trim().is_empty() {
        return Err(GenError::EmptyDocument);
    }
    let inputs = format!("QUERY: {query}\n\nDOCUMENT:\n{}", document.text);
    let user = prompts::render(prompts::FULL_CONTEXT, &[("inputs", &inputs)])?;
    let req = ctx.request(CallTag::FullContext, user);
    let outcome = run_with_retry(ctx.client, &req, ctx.max_attempts, extract_answer)?;
    Ok(ctx.answer_from(Method::FullContext, outcome, None))
}

/// One call that writes a free-form plan, then the answer.
pub fn answer_retrieve_and_plan(
    ctx: GenCtx<'_>,
    query: &str,
    chunks: &[Chunk],
) -> Result<Answer, GenError> {
    if chunks.is_empty() {
        return Err(GenError::EmptyChunks);
    }
    let user =
        prompts::render(prompts::RETRIEVE_AND_PLAN, &[("inputs", &base_inputs(query, chunks))])?;
    let req = ctx.request(CallTag::RetrieveAndPlan, user);
    let outcome = run_with_retry(ctx.client, &req, ctx.max_attempts, extract_plan_then_answer)?;
    let (plan, answer_text) = outcome.value.clone();
    let outcome = Retried {
        value: answer_text,
        attempts: outcome.attempts,
        response: outcome.response,
    };
    Ok(ctx.answer_from(Method::RetrieveAndPlan, outcome, Some(plan)))
}

/// Result of the two-stage plan-and-retrieve baseline.
#[derive(Debug, Clone)]
pub struct PlanRetrieveOutcome {
    pub answer: Answer,
    pub retrieved: Vec<ScoredChunk>,
    pub warnings: Vec<String>,
}

/// Stage 1 plans from the query alone and emits retrieval hints; each hint
/// retrieves top-ceil(k/h), the union is deduplicated and truncated to the
/// best k by score; stage 2 answers over the retrieved chunks.
pub fn answer_plan_and_retrieve(
    ctx: GenCtx<'_>,
    query: &str,
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    k: usize,
    scope_doc: Option<&str>,
    chunks_by_id: &BTreeMap<String, Chunk>,
) -> Result<PlanRetrieveOutcome, GenError> {
    let mut warnings = Vec::new();

    let stage1_inputs = format!("QUERY: {query}");
    let user = prompts::render(prompts::PLAN_AND_RETRIEVE, &[("inputs", &stage1_inputs)])?;
    let req = ctx.request(CallTag::PlanAndRetrieve, user);
    let stage1 = run_with_retry(ctx.client, &req, ctx.max_attempts, extract_plan_and_hints)?;
    let (plan, mut hints) = stage1.value;
    if hints.is_empty() {
        warnings.push("no parsable retrieval hints; falling back to the original query".to_string());
        hints.push(query.to_string());
    }

    let per_hint = k.div_ceil(hints.len());
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for hint in &hints {
        let result = retrieve_topk_scoped(index, ctx.query_id, hint, per_hint, provider, scope_doc)?;
        for entry in result.ranked {
            let slot = best.entry(entry.chunk_id).or_insert(f64::NEG_INFINITY);
            if entry.score > *slot {
                *slot = entry.score;
            }
        }
    }
    let mut merged: Vec<ScoredChunk> = best
        .into_iter()
        .map(|(chunk_id, score)| ScoredChunk {
            chunk_id,
            score,
            injected: false,
        })
        .collect();
    merged.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    merged.truncate(k);

    let chunks: Vec<Chunk> = merged
        .iter()
        .filter_map(|s| chunks_by_id.get(&s.chunk_id).cloned())
        .collect();
    if chunks.is_empty() {
        return Err(GenError::EmptyChunks);
    }

    let stage2_inputs = format!("{}\n\nPLAN: {plan}", base_inputs(query, &chunks));
    let user = prompts::render(prompts::PLAN_AND_RETRIEVE, &[("inputs", &stage2_inputs)])?;
    let req = ctx.request(CallTag::PlanAndRetrieve, user);
    let stage2 = run_with_retry(ctx.client, &req, ctx.max_attempts, extract_answer)?;
    let attempts = stage1.attempts + stage2.attempts;
    let mut answer = ctx.answer_from(Method::PlanAndRetrieve, stage2, Some(plan));
    answer.provenance.attempts = attempts;
    Ok(PlanRetrieveOutcome {
        answer,
        retrieved: merged,
        warnings,
    })
}

/// Standard RAG augmented with the canonical discourse-marker edge lines.
pub fn answer_markers(
    ctx: GenCtx<'_>,
    query: &str,
    chunks: &[Chunk],
    marker_graph: &MarkerGraph,
) -> Result<Answer, GenError> {
    if chunks.is_empty() {
        return Err(GenError::EmptyChunks);
    }
    if !marker_graph.is_complete() || marker_graph.k() != chunks.len() {
        return Err(GenError::IncompleteMarkerGraph);
    }
    let inputs = format!(
        "{}\n\nDISCOURSE MARKERS:\n{}",
        base_inputs(query, chunks),
        marker_graph.edge_lines()
    );
    let user = prompts::render(prompts::STANDARD_RAG, &[("inputs", &inputs)])?;
    let req = ctx.request(CallTag::Markers, user);
    let outcome = run_with_retry(ctx.client, &req, ctx.max_attempts, extract_answer)?;
    Ok(ctx.answer_from(Method::Markers, outcome, None))
}
