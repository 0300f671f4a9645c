//! End-to-end orchestration: retrieval → structures → plan → answer per
//! query, for every method, with failure isolation and exact accounting.
//!
//! Queries run in parallel (default 4 workers); within a query the stages
//! follow their data dependencies. The tree cache is protected by a mutex
//! plus a per-key claim gate so a chunk retrieved by several in-flight
//! queries is parsed exactly once — call counts and therefore reports stay
//! deterministic even on a cold cache.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{chunk_corpus, Chunk, CorpusError, Document};
use crate::discourse::inter::{
    build_graph_prompt, build_marker_prompt, parse_graph_output, parse_marker_output, MarkerGraph,
    RhetoricalGraph,
};
use crate::discourse::intra::{self, cache_key, IntraError, TreeCache, TreeSource};
use crate::generation::{
    answer_disco_opt, answer_full_context, answer_markers, answer_plan_and_retrieve,
    answer_retrieve_and_plan, answer_standard, Answer, GenCtx, Method,
};
use crate::llm::{run_with_retry, LlmClient, LlmError};
use crate::metrics::{dr_score, exact_match, llm_judge_score, rouge_l_multi, sari};
use crate::perturb::{perturb_graph, perturb_plan, perturb_tree, PerturbSpec, PerturbTarget};
use crate::planning::{build_plan_prompt, parse_plan, Blueprint, PlanProvenance};
use crate::prompts::PROMPT_VERSION;
use crate::report::{
    aggregate_report, config_hash, Accounting, EvalReport, MetricScores, QueryReport, ReportError,
    SCHEMA_VERSION,
};
use crate::retrieval::{
    build_index, inject_noise, retrieve_topk_scoped, EmbeddingProvider, HashEmbedding,
    RetrievalError, VectorIndex,
};
use crate::text::fnv1a64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Intra(#[from] IntraError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("query file {path} line {line}: {reason}")]
    MalformedQuery {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index chunk_size {index} does not match configured chunk_size {configured}")]
    ChunkSizeMismatch { index: usize, configured: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalScope {
    /// Retrieve over the entire corpus.
    Open,
    /// Restrict retrieval to each query's source document.
    Closed,
}

/// The full resolved configuration of a run. Defaults follow the reference
/// setup: 256-token chunks, top-10 cosine retrieval, three repair attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub method: Method,
    pub chunk_size: usize,
    pub top_k: usize,
    pub noise_ratio: f64,
    pub perturb: Vec<PerturbSpec>,
    pub retrieval_scope: RetrievalScope,
    pub parser_backend: String,
    pub generator_backend: String,
    pub judge_backend: Option<String>,
    pub max_attempts: u32,
    pub cache_path: Option<PathBuf>,
    pub seed: u64,
    pub embedding_dim: usize,
    pub max_output_tokens: u32,
    pub parallelism: usize,
    pub llm_in_flight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Disco,
            chunk_size: 256,
            top_k: 10,
            noise_ratio: 0.0,
            perturb: Vec::new(),
            retrieval_scope: RetrievalScope::Open,
            parser_backend: "mock".to_string(),
            generator_backend: "mock".to_string(),
            judge_backend: None,
            max_attempts: 3,
            cache_path: None,
            seed: 0,
            embedding_dim: 64,
            max_output_tokens: 1024,
            parallelism: 4,
            llm_in_flight: 8,
        }
    }
}

impl PipelineConfig {
    /// The JSON value embedded verbatim in every report.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// One benchmark query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub question: String,
    #[serde(default)]
    pub golds: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default = "default_dataset")]
    pub dataset: String,
}

fn default_dataset() -> String {
    "default".to_string()
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, PipelineError> {
    let raw = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut queries = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord =
            serde_json::from_str(line).map_err(|e| PipelineError::MalformedQuery {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        queries.push(record);
    }
    Ok(queries)
}

/// Per-key claim gate: the holder of a key is the only thread parsing that
/// chunk; everyone else waits and then reads the cache.
struct KeyGate {
    claimed: Mutex<HashSet<String>>,
    cv: Condvar,
}

impl KeyGate {
    fn new() -> Self {
        Self {
            claimed: Mutex::new(HashSet::new()),
            cv: Condvar::new(),
        }
    }

    fn claim(&self, key: &str) {
        let mut set = self.claimed.lock().expect("gate poisoned");
        while set.contains(key) {
            set = self.cv.wait(set).expect("gate poisoned");
        }
        set.insert(key.to_string());
    }

    fn release(&self, key: &str) {
        self.claimed.lock().expect("gate poisoned").remove(key);
        self.cv.notify_all();
    }
}

/// Cache population counters reported by `parse-trees`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarmStats {
    pub hits: usize,
    pub parsed: usize,
    pub fallbacks: usize,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    docs: BTreeMap<String, Document>,
    chunks: BTreeMap<String, Chunk>,
    index: VectorIndex,
    provider: Arc<dyn EmbeddingProvider>,
    client: Arc<LlmClient>,
    cache: Mutex<TreeCache>,
    gate: KeyGate,
}

impl Pipeline {
    /// Builds chunks and an in-memory index from the corpus, opening the
    /// configured cache file (or an in-memory cache when none is set).
    pub fn from_corpus(
        cfg: PipelineConfig,
        docs: Vec<Document>,
        client: Arc<LlmClient>,
    ) -> Result<(Self, Vec<String>), PipelineError> {
        let chunks = chunk_corpus(&docs, cfg.chunk_size)?;
        let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedding::new(cfg.embedding_dim));
        let index = build_index(&chunks, provider.as_ref(), cfg.chunk_size)?;
        Self::assemble(cfg, docs, chunks, index, provider, client)
    }

    /// Uses a pre-built (typically loaded) index; its chunk size must match
    /// the configuration.
    pub fn with_index(
        cfg: PipelineConfig,
        docs: Vec<Document>,
        index: VectorIndex,
        client: Arc<LlmClient>,
    ) -> Result<(Self, Vec<String>), PipelineError> {
        if index.chunk_size() != cfg.chunk_size {
            return Err(PipelineError::ChunkSizeMismatch {
                index: index.chunk_size(),
                configured: cfg.chunk_size,
            });
        }
        let chunks = chunk_corpus(&docs, cfg.chunk_size)?;
        let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedding::new(cfg.embedding_dim));
        Self::assemble(cfg, docs, chunks, index, provider, client)
    }

    fn assemble(
        cfg: PipelineConfig,
        docs: Vec<Document>,
        chunks: Vec<Chunk>,
        index: VectorIndex,
        provider: Arc<dyn EmbeddingProvider>,
        client: Arc<LlmClient>,
    ) -> Result<(Self, Vec<String>), PipelineError> {
        let (cache, warnings) = match &cfg.cache_path {
            Some(path) => TreeCache::open(path, PROMPT_VERSION)?,
            None => (TreeCache::in_memory(PROMPT_VERSION), Vec::new()),
        };
        Ok((
            Self {
                cfg,
                docs: docs.into_iter().map(|d| (d.doc_id.clone(), d)).collect(),
                chunks: chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect(),
                index,
                provider,
                client,
                cache: Mutex::new(cache),
                gate: KeyGate::new(),
            },
            warnings,
        ))
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    /// Parses (or fetches) the tree for one chunk with per-key claim
    /// semantics, so concurrent callers never duplicate an LLM parse.
    fn tree_for_chunk(
        &self,
        query_id: &str,
        chunk: &Chunk,
    ) -> Result<intra::TreeOutcome, IntraError> {
        let backend = self.cfg.parser_backend.clone();
        let key = {
            let cache = self.cache.lock().expect("cache poisoned");
            cache_key(&chunk.text, cache.prompt_version(), &backend)
        };
        self.gate.claim(&key);
        let result = (|| {
            let mut warnings = Vec::new();
            {
                let cache = self.cache.lock().expect("cache poisoned");
                match cache.lookup(&key) {
                    Ok(Some(tree)) => {
                        return Ok(intra::TreeOutcome {
                            tree,
                            source: TreeSource::CacheHit,
                            warnings,
                        })
                    }
                    Ok(None) => {}
                    Err(e) => warnings.push(format!("{e}; re-parsing")),
                }
            }
            let mut outcome = intra::parse_or_fallback(
                &self.client,
                &backend,
                query_id,
                chunk,
                self.cfg.max_attempts,
            )?;
            {
                let mut cache = self.cache.lock().expect("cache poisoned");
                cache.insert(&key, &chunk.chunk_id, &backend, &outcome.tree)?;
            }
            warnings.append(&mut outcome.warnings);
            outcome.warnings = warnings;
            Ok(outcome)
        })();
        self.gate.release(&key);
        result
    }

    /// Populates the tree cache for every corpus chunk (the offline
    /// construction pass behind `parse-trees`).
    pub fn warm_cache(&self) -> Result<WarmStats, IntraError> {
        let chunks: Vec<&Chunk> = self.chunks.values().collect();
        let outcomes = parallel_map(&chunks, self.cfg.parallelism, |chunk| {
            self.tree_for_chunk("offline", chunk).map(|o| o.source)
        });
        let mut stats = WarmStats::default();
        for outcome in outcomes {
            match outcome? {
                TreeSource::CacheHit => stats.hits += 1,
                TreeSource::Parsed { .. } => stats.parsed += 1,
                TreeSource::Fallback { .. } => stats.fallbacks += 1,
            }
        }
        Ok(stats)
    }

    fn scope_doc<'q>(&self, qr: &'q QueryRecord) -> Result<Option<&'q str>, String> {
        match self.cfg.retrieval_scope {
            RetrievalScope::Open => Ok(None),
            RetrievalScope::Closed => match &qr.doc_id {
                Some(doc_id) => Ok(Some(doc_id.as_str())),
                None => Err("closed-domain retrieval requires doc_id on the query".to_string()),
            },
        }
    }

    fn gen_ctx<'a>(&'a self, query_id: &'a str) -> GenCtx<'a> {
        GenCtx {
            client: &self.client,
            backend_id: &self.cfg.generator_backend,
            query_id,
            max_attempts: self.cfg.max_attempts,
            max_output_tokens: self.cfg.max_output_tokens,
        }
    }

    /// Runs one query end to end. Failures are recorded, never raised: the
    /// report row carries the reason and the accounting of whatever calls
    /// were spent before the failure.
    pub fn run_query(&self, qr: &QueryRecord) -> QueryReport {
        let mut warnings = Vec::new();
        let mut injected = Vec::new();
        let mut retrieved = Vec::new();
        let result = self.try_run(qr, &mut warnings, &mut injected, &mut retrieved);

        let mut metrics = MetricScores::default();
        let mut judge_excluded = false;
        let (answer, plan, failure, attempts) = match result {
            Ok((answer, plan)) => {
                self.score(qr, &answer, &mut metrics, &mut judge_excluded, &mut warnings);
                let attempts = answer.provenance.attempts as u64;
                (Some(answer.text), plan, None, attempts)
            }
            Err(reason) => (None, None, Some(reason), 0),
        };

        let totals = self.client.ledger().query_totals(&qr.query_id);
        QueryReport {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash(&self.cfg.snapshot()),
            query_id: qr.query_id.clone(),
            method: self.cfg.method,
            dataset: qr.dataset.clone(),
            answer,
            plan,
            failure,
            metrics,
            accounting: Accounting {
                calls: totals.calls,
                input_tokens: totals.input_tokens,
                output_tokens: totals.output_tokens,
                latency_ms: totals.latency_ms,
                attempts,
            },
            retrieved,
            injected,
            warnings,
            judge_excluded,
        }
    }

    fn score(
        &self,
        qr: &QueryRecord,
        answer: &Answer,
        metrics: &mut MetricScores,
        judge_excluded: &mut bool,
        warnings: &mut Vec<String>,
    ) {
        if !qr.golds.is_empty() {
            metrics.em = exact_match(&answer.text, &qr.golds).ok();
            metrics.rouge_l = rouge_l_multi(&answer.text, &qr.golds).ok();
            metrics.dr = dr_score(&answer.text, &qr.golds).ok();
            if let Some(doc) = qr.doc_id.as_ref().and_then(|id| self.docs.get(id)) {
                metrics.sari = sari(&doc.text, &answer.text, &qr.golds).ok();
            }
        }
        if let Some(judge) = &self.cfg.judge_backend {
            let reference = qr.golds.join(" | ");
            match llm_judge_score(
                &self.client,
                judge,
                &qr.query_id,
                &qr.question,
                &answer.text,
                &reference,
                self.cfg.max_attempts,
            ) {
                Ok(Some(score)) => metrics.llm_score = Some(score),
                Ok(None) => *judge_excluded = true,
                Err(e) => {
                    warnings.push(format!("judge call failed: {e}"));
                    *judge_excluded = true;
                }
            }
        }
    }

    fn try_run(
        &self,
        qr: &QueryRecord,
        warnings: &mut Vec<String>,
        injected: &mut Vec<String>,
        retrieved: &mut Vec<String>,
    ) -> Result<(Answer, Option<Blueprint>), String> {
        let scope = self.scope_doc(qr)?;
        let ctx = self.gen_ctx(&qr.query_id);
        let err = |e: &dyn std::fmt::Display| e.to_string();

        match self.cfg.method {
            Method::FullContext => {
                let doc_id = qr
                    .doc_id
                    .as_ref()
                    .ok_or_else(|| "full_context requires doc_id on the query".to_string())?;
                let doc = self
                    .docs
                    .get(doc_id)
                    .ok_or_else(|| format!("unknown doc_id {doc_id:?}"))?;
                Ok((answer_full_context(ctx, &qr.question, doc).map_err(|e| err(&e))?, None))
            }
            Method::PlanAndRetrieve => {
                let outcome = answer_plan_and_retrieve(
                    ctx,
                    &qr.question,
                    &self.index,
                    self.provider.as_ref(),
                    self.cfg.top_k,
                    scope,
                    &self.chunks,
                )
                .map_err(|e| err(&e))?;
                warnings.extend(outcome.warnings);
                retrieved.extend(outcome.retrieved.iter().map(|s| s.chunk_id.clone()));
                Ok((outcome.answer, None))
            }
            method => {
                let chunks = self.retrieve(qr, scope, warnings, injected, retrieved)?;
                match method {
                    Method::StandardRag => Ok((
                        answer_standard(ctx, &qr.question, &chunks).map_err(|e| err(&e))?,
                        None,
                    )),
                    Method::RetrieveAndPlan => Ok((
                        answer_retrieve_and_plan(ctx, &qr.question, &chunks)
                            .map_err(|e| err(&e))?,
                        None,
                    )),
                    Method::Markers => {
                        let graph = self.marker_graph(qr, &chunks, warnings)?;
                        Ok((
                            answer_markers(ctx, &qr.question, &chunks, &graph)
                                .map_err(|e| err(&e))?,
                            None,
                        ))
                    }
                    Method::Disco => self.run_disco(qr, &chunks, warnings),
                    Method::FullContext | Method::PlanAndRetrieve => unreachable!(),
                }
            }
        }
    }

    fn retrieve(
        &self,
        qr: &QueryRecord,
        scope: Option<&str>,
        warnings: &mut Vec<String>,
        injected: &mut Vec<String>,
        retrieved: &mut Vec<String>,
    ) -> Result<Vec<Chunk>, String> {
        let mut result = retrieve_topk_scoped(
            &self.index,
            &qr.query_id,
            &qr.question,
            self.cfg.top_k,
            self.provider.as_ref(),
            scope,
        )
        .map_err(|e| e.to_string())?;

        if self.cfg.noise_ratio > 0.0 {
            let in_result: BTreeSet<&String> =
                result.ranked.iter().map(|s| &s.chunk_id).collect();
            let pool: BTreeSet<String> = self
                .index
                .chunk_ids()
                .filter(|id| scope.map_or(true, |d| Chunk::doc_of(id) == d))
                .filter(|id| !in_result.contains(id))
                .cloned()
                .collect();
            let seed = self.cfg.seed ^ fnv1a64(format!("noise|{}", qr.query_id).as_bytes());
            match inject_noise(&result, &pool, self.cfg.noise_ratio, seed) {
                Ok(noisy) => result = noisy,
                Err(e) => warnings.push(format!("noise injection skipped: {e}")),
            }
        }

        retrieved.extend(result.ranked.iter().map(|s| s.chunk_id.clone()));
        injected.extend(
            result
                .ranked
                .iter()
                .filter(|s| s.injected)
                .map(|s| s.chunk_id.clone()),
        );
        result
            .ranked
            .iter()
            .map(|s| {
                self.chunks
                    .get(&s.chunk_id)
                    .cloned()
                    .ok_or_else(|| format!("retrieved unknown chunk {:?}", s.chunk_id))
            })
            .collect()
    }

    fn marker_graph(
        &self,
        qr: &QueryRecord,
        chunks: &[Chunk],
        warnings: &mut Vec<String>,
    ) -> Result<MarkerGraph, String> {
        let nodes: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        if chunks.len() < 2 {
            warnings.push("fewer than 2 chunks; marker graph is empty".to_string());
            return Ok(MarkerGraph::all_none(nodes));
        }
        let req = build_marker_prompt(chunks, &self.cfg.parser_backend, &qr.query_id)
            .map_err(|e| e.to_string())?;
        let parse_nodes = nodes.clone();
        match run_with_retry(&self.client, &req, self.cfg.max_attempts, move |raw| {
            parse_marker_output(raw, &parse_nodes).map_err(|e| e.to_string())
        }) {
            Ok(outcome) => {
                let (graph, parse_warnings) = outcome.value;
                warnings.extend(parse_warnings);
                Ok(graph)
            }
            Err(LlmError::Exhausted { attempts, .. }) => {
                warnings.push(format!(
                    "marker inference exhausted after {attempts} attempts; using all-NONE graph"
                ));
                Ok(MarkerGraph::all_none(nodes))
            }
            Err(e) => Err(e.to_string()),
        }
    }

    fn run_disco(
        &self,
        qr: &QueryRecord,
        chunks: &[Chunk],
        warnings: &mut Vec<String>,
    ) -> Result<(Answer, Option<Blueprint>), String> {
        // Intra-chunk trees (offline-cached).
        let mut trees = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let outcome = self
                .tree_for_chunk(&qr.query_id, chunk)
                .map_err(|e| e.to_string())?;
            warnings.extend(outcome.warnings);
            trees.push(outcome.tree);
        }

        // Inter-chunk graph, one listwise call.
        let nodes: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        let mut graph = if chunks.len() < 2 {
            warnings.push("fewer than 2 chunks; using empty graph".to_string());
            RhetoricalGraph::all_unrelated(nodes)
        } else {
            let req = build_graph_prompt(chunks, &self.cfg.parser_backend, &qr.query_id)
                .map_err(|e| e.to_string())?;
            let parse_nodes = nodes.clone();
            match run_with_retry(&self.client, &req, self.cfg.max_attempts, move |raw| {
                parse_graph_output(raw, &parse_nodes).map_err(|e| e.to_string())
            }) {
                Ok(outcome) => {
                    let (graph, parse_warnings) = outcome.value;
                    warnings.extend(parse_warnings);
                    graph
                }
                Err(LlmError::Exhausted { attempts, .. }) => {
                    warnings.push(format!(
                        "graph inference exhausted after {attempts} attempts; using all-UNRELATED graph"
                    ));
                    RhetoricalGraph::all_unrelated(nodes)
                }
                Err(e) => return Err(e.to_string()),
            }
        };

        // Structural perturbations on trees and graph, then the plan is
        // regenerated from the perturbed structures (the plan is downstream
        // of both).
        for spec in self.cfg.perturb.iter().filter(|s| s.target == PerturbTarget::Tree) {
            for (chunk, tree) in chunks.iter().zip(trees.iter_mut()) {
                let salt = fnv1a64(format!("{}|{}", qr.query_id, chunk.chunk_id).as_bytes());
                let (perturbed, w) =
                    perturb_tree(tree, &spec.reseeded(salt)).map_err(|e| e.to_string())?;
                warnings.extend(w);
                *tree = perturbed;
            }
        }
        for spec in self.cfg.perturb.iter().filter(|s| s.target == PerturbTarget::Graph) {
            let salt = fnv1a64(qr.query_id.as_bytes());
            let (perturbed, w) =
                perturb_graph(&graph, &spec.reseeded(salt)).map_err(|e| e.to_string())?;
            warnings.extend(w);
            graph = perturbed;
        }

        // Discourse-driven plan.
        let req = build_plan_prompt(
            &qr.question,
            chunks,
            &trees,
            &graph,
            &self.cfg.parser_backend,
            &qr.query_id,
        )
        .map_err(|e| e.to_string())?;
        let planned = run_with_retry(&self.client, &req, self.cfg.max_attempts, |raw| {
            parse_plan(raw).map_err(|e| e.to_string())
        })
        .map_err(|e| e.to_string())?;
        let mut plan = Some(Blueprint::from_text(
            planned.value,
            PlanProvenance {
                query_id: qr.query_id.clone(),
                backend_id: self.cfg.parser_backend.clone(),
                attempt: planned.attempts,
            },
        ));

        for spec in self.cfg.perturb.iter().filter(|s| s.target == PerturbTarget::Plan) {
            let Some(current) = plan.as_ref() else { break };
            let salt = fnv1a64(qr.query_id.as_bytes());
            let (perturbed, w) =
                perturb_plan(current, &spec.reseeded(salt)).map_err(|e| e.to_string())?;
            warnings.extend(w);
            plan = perturbed;
        }

        let answer = answer_disco_opt(
            self.gen_ctx(&qr.query_id),
            &qr.question,
            chunks,
            &trees,
            &graph,
            plan.as_ref(),
        )
        .map_err(|e| e.to_string())?;
        Ok((answer, plan))
    }

    /// Runs every query (parallel, input order preserved in the output).
    pub fn run_all(&self, queries: &[QueryRecord]) -> Vec<QueryReport> {
        let refs: Vec<&QueryRecord> = queries.iter().collect();
        parallel_map(&refs, self.cfg.parallelism, |qr| self.run_query(qr))
    }

    /// Runs every query and aggregates into a report.
    pub fn run_report(&self, queries: &[QueryRecord]) -> Result<EvalReport, PipelineError> {
        let records = self.run_all(queries);
        Ok(aggregate_report(records, self.cfg.snapshot())?)
    }
}

/// Runs one report per configuration; the corpus is re-chunked and re-indexed
/// per cell because chunk size may vary across the grid. `make_client` is
/// invoked per cell so each report gets its own ledger.
pub fn run_suite(
    docs: &[Document],
    queries: &[QueryRecord],
    grid: &[PipelineConfig],
    make_client: &(dyn Fn() -> LlmClient + Sync),
) -> Result<Vec<EvalReport>, PipelineError> {
    let mut reports = Vec::with_capacity(grid.len());
    for cfg in grid {
        let client = Arc::new(make_client());
        let (pipeline, _warnings) = Pipeline::from_corpus(cfg.clone(), docs.to_vec(), client)?;
        reports.push(pipeline.run_report(queries)?);
    }
    Ok(reports)
}

/// Fixed-size worker pool over a slice; results keep input order.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if items.is_empty() {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let workers = workers.clamp(1, items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().expect("slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot poisoned").expect("slot filled"))
        .collect()
}
