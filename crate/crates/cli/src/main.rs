//! Batch CLI for the disco-rag engine.
//!
//! Exit codes: 0 success, 1 fatal error, 2 partial failure (some queries
//! failed but the run completed). Secrets come only from environment
//! variables (LLM_API_URL / LLM_API_KEY / JUDGE_API_URL / JUDGE_API_KEY),
//! never flags or config files.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use disco_rag::corpus::{chunk_corpus, load_corpus, Document};
use disco_rag::generation::Method;
use disco_rag::llm::{CallTag, HttpBackend, LlmClient, MockBackend};
use disco_rag::perturb::PerturbSpec;
use disco_rag::pipeline::{load_queries, Pipeline, PipelineConfig, QueryRecord};
use disco_rag::report::{
    aggregate_csv, aggregate_report, aggregate_text_table, config_hash, efficiency_csv,
    load_report, sweep_summary_csv, write_report, EvalReport, MetricScores, QueryReport,
    SCHEMA_VERSION,
};
use disco_rag::retrieval::{build_index, load_index, save_index, HashEmbedding};

#[derive(Parser)]
#[command(name = "disco-rag", version, about = "Discourse-aware RAG experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and chunk a corpus, writing the chunk table.
    Ingest(CommonArgs),
    /// Build (and persist) the vector index sidecar for a corpus.
    Index(CommonArgs),
    /// Populate the RST tree cache for every chunk (the offline pass).
    ParseTrees(CommonArgs),
    /// Run the pipeline for one configuration and write a report.
    Run(CommonArgs),
    /// Run a Fig.3-style sweep over chunk size, top-k, or noise ratio.
    Sweep(SweepArgs),
    /// Run with structural perturbations and write a replayable manifest.
    PerturbRun(CommonArgs),
    /// Re-score existing answers against the query golds.
    Evaluate(EvaluateArgs),
    /// Merge report files into aggregate and efficiency tables.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Corpus JSONL: one {"doc_id","text","lang"?} per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Query JSONL: one {"query_id","question","golds",...} per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Config file (.toml or .json) with PipelineConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// disco | full_context | standard_rag | retrieve_and_plan | plan_and_retrieve | markers
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    /// Repeatable perturbation spec target:kind:fraction:seed.
    #[arg(long)]
    perturb: Vec<String>,
    /// Backend id for parser and generator calls (mock | http).
    #[arg(long)]
    backend: Option<String>,
    /// Backend id for judge calls; unset disables the LLM judge.
    #[arg(long)]
    judge_backend: Option<String>,
    /// Fixture file for the mock backend (prompt hash -> response(s)).
    #[arg(long)]
    mock_fixtures: Option<PathBuf>,
    /// Tree cache path; defaults to <corpus>.trees.jsonl.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output directory (reports) or file (ingest/index).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Index sidecar path; defaults to <corpus>.index.jsonl.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Build and persist the index if the sidecar is missing.
    #[arg(long)]
    auto_index: bool,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Knob to vary: chunk-size | top-k | noise.
    #[arg(long)]
    vary: String,
    /// Comma-separated values for the varied knob.
    #[arg(long)]
    values: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Answers to re-score: a report JSONL or bare {query_id, answer} lines.
    #[arg(long)]
    answers: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSONL files to merge.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output directory for the merged tables (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    // Exit codes are {0 success, 1 fatal, 2 partial}; usage errors are
    // fatal, so clap's default exit 2 is remapped.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Index(args) => cmd_index(args),
        Command::ParseTrees(args) => cmd_parse_trees(args),
        Command::Run(args) => cmd_run(args, false),
        Command::PerturbRun(args) => cmd_run(args, true),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Defaults <- config file <- CLI flags, in increasing precedence.
fn resolve_config(args: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                serde_json::from_str(&raw)
                    .with_context(|| format!("malformed JSON config {}", path.display()))?
            } else {
                toml::from_str(&raw)
                    .with_context(|| format!("malformed TOML config {}", path.display()))?
            }
        }
        None => PipelineConfig::default(),
    };
    if let Some(method) = &args.method {
        cfg.method = Method::parse(method)
            .ok_or_else(|| anyhow!("unknown method {method:?} (expected one of disco, full_context, standard_rag, retrieve_and_plan, plan_and_retrieve, markers)"))?;
    }
    if let Some(v) = args.chunk_size {
        cfg.chunk_size = v;
    }
    if let Some(v) = args.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = args.noise_ratio {
        cfg.noise_ratio = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.parallelism {
        cfg.parallelism = v;
    }
    if !args.perturb.is_empty() {
        cfg.perturb = args
            .perturb
            .iter()
            .map(|flag| PerturbSpec::parse_flag(flag).map_err(|e| anyhow!(e)))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(backend) = &args.backend {
        cfg.parser_backend = backend.clone();
        cfg.generator_backend = backend.clone();
    }
    if let Some(judge) = &args.judge_backend {
        cfg.judge_backend = Some(judge.clone());
    }
    if let Some(cache) = &args.cache {
        cfg.cache_path = Some(cache.clone());
    } else if cfg.cache_path.is_none() {
        if let Some(corpus) = &args.corpus {
            cfg.cache_path = Some(sidecar(corpus, "trees.jsonl"));
        }
    }
    Ok(cfg)
}

fn sidecar(corpus: &Path, suffix: &str) -> PathBuf {
    let mut name = corpus.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    corpus.with_file_name(name)
}

/// Registers the mock backend (always) and HTTP backends when the
/// environment provides endpoints.
fn build_client(cfg: &PipelineConfig, mock_fixtures: Option<&Path>) -> Result<LlmClient> {
    let mut client = LlmClient::new(cfg.llm_in_flight);
    let mock = match mock_fixtures {
        Some(path) => MockBackend::from_fixture_file(path)?,
        None => MockBackend::new(),
    };
    client.register("mock", Arc::new(mock));
    if let Ok(url) = std::env::var("LLM_API_URL") {
        let key = std::env::var("LLM_API_KEY").ok();
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| "default".to_string());
        client.register("http", Arc::new(HttpBackend::new(&url, key, &model)?));
    }
    if let Ok(url) = std::env::var("JUDGE_API_URL") {
        let key = std::env::var("JUDGE_API_KEY").ok();
        let model = std::env::var("JUDGE_MODEL").unwrap_or_else(|_| "default".to_string());
        client.register("judge-http", Arc::new(HttpBackend::new(&url, key, &model)?));
    }
    for (role, id) in [
        ("parser", Some(&cfg.parser_backend)),
        ("generator", Some(&cfg.generator_backend)),
        ("judge", cfg.judge_backend.as_ref()),
    ] {
        if let Some(id) = id {
            if !client.has_backend(id) {
                bail!(
                    "{role} backend {id:?} is not registered; use \"mock\", or set LLM_API_URL/JUDGE_API_URL for \"http\"/\"judge-http\""
                );
            }
        }
    }
    Ok(client)
}

fn print_config_if_asked(args: &CommonArgs, cfg: &PipelineConfig) -> bool {
    if args.print_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg.snapshot()).expect("config json")
        );
        true
    } else {
        false
    }
}

fn require_corpus(args: &CommonArgs) -> Result<(PathBuf, Vec<Document>)> {
    let path = args
        .corpus
        .clone()
        .ok_or_else(|| anyhow!("--corpus is required"))?;
    let docs = load_corpus(&path)
        .with_context(|| format!("cannot load corpus {}", path.display()))?;
    Ok((path, docs))
}

fn require_queries(args: &CommonArgs) -> Result<Vec<QueryRecord>> {
    let path = args
        .queries
        .clone()
        .ok_or_else(|| anyhow!("--queries is required"))?;
    load_queries(&path).with_context(|| format!("cannot load queries {}", path.display()))
}

fn cmd_ingest(args: CommonArgs) -> Result<i32> {
    let cfg = resolve_config(&args)?;
    if print_config_if_asked(&args, &cfg) {
        return Ok(0);
    }
    let (corpus_path, docs) = require_corpus(&args)?;
    let chunks = chunk_corpus(&docs, cfg.chunk_size)?;
    let out = args.out.clone().unwrap_or_else(|| sidecar(&corpus_path, "chunks.jsonl"));
    let mut body = String::new();
    for chunk in &chunks {
        body.push_str(&serde_json::to_string(chunk)?);
        body.push('\n');
    }
    std::fs::write(&out, body).with_context(|| format!("cannot write {}", out.display()))?;
    println!(
        "ingested {} documents into {} chunks of {} tokens -> {}",
        docs.len(),
        chunks.len(),
        cfg.chunk_size,
        out.display()
    );
    Ok(0)
}

fn cmd_index(args: CommonArgs) -> Result<i32> {
    let cfg = resolve_config(&args)?;
    if print_config_if_asked(&args, &cfg) {
        return Ok(0);
    }
    let (corpus_path, docs) = require_corpus(&args)?;
    let chunks = chunk_corpus(&docs, cfg.chunk_size)?;
    let provider = HashEmbedding::new(cfg.embedding_dim);
    let index = build_index(&chunks, &provider, cfg.chunk_size)?;
    let out = args
        .index
        .clone()
        .or_else(|| args.out.clone())
        .unwrap_or_else(|| sidecar(&corpus_path, "index.jsonl"));
    save_index(&index, &out)?;
    println!(
        "indexed {} chunks (dim {}) -> {}",
        index.len(),
        cfg.embedding_dim,
        out.display()
    );
    Ok(0)
}

fn cmd_parse_trees(args: CommonArgs) -> Result<i32> {
    let cfg = resolve_config(&args)?;
    if print_config_if_asked(&args, &cfg) {
        return Ok(0);
    }
    let (_, docs) = require_corpus(&args)?;
    let client = Arc::new(build_client(&cfg, args.mock_fixtures.as_deref())?);
    let (pipeline, warnings) = Pipeline::from_corpus(cfg, docs, client)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let stats = pipeline.warm_cache()?;
    let rst_calls = pipeline.client().ledger().count_tag(CallTag::RstParse);
    println!(
        "tree cache: {} hits, {} parsed, {} fallbacks ({} rst_parse calls)",
        stats.hits, stats.parsed, stats.fallbacks, rst_calls
    );
    Ok(0)
}

fn run_id(snapshot: &serde_json::Value) -> String {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    format!("{millis}-{}", config_hash(snapshot))
}

/// Reports are append-only: a fresh timestamped name per run, never
/// clobbering earlier files in the same directory.
fn fresh_path(dir: &Path, stem: &str, run: &str, ext: &str) -> PathBuf {
    let mut candidate = dir.join(format!("{stem}-{run}.{ext}"));
    let mut bump = 1;
    while candidate.exists() {
        candidate = dir.join(format!("{stem}-{run}-{bump}.{ext}"));
        bump += 1;
    }
    candidate
}

fn prepare_index(
    args: &CommonArgs,
    cfg: &PipelineConfig,
    corpus_path: &Path,
    docs: &[Document],
) -> Result<disco_rag::retrieval::VectorIndex> {
    let index_path = args
        .index
        .clone()
        .unwrap_or_else(|| sidecar(corpus_path, "index.jsonl"));
    let provider = HashEmbedding::new(cfg.embedding_dim);
    if index_path.exists() {
        let index = load_index(&index_path, &provider)?;
        if index.chunk_size() != cfg.chunk_size {
            bail!(
                "index {} was built with chunk_size {} but the run is configured for {}; re-run `disco-rag index`",
                index_path.display(),
                index.chunk_size(),
                cfg.chunk_size
            );
        }
        Ok(index)
    } else if args.auto_index {
        let chunks = chunk_corpus(docs, cfg.chunk_size)?;
        let index = build_index(&chunks, &provider, cfg.chunk_size)?;
        save_index(&index, &index_path)?;
        eprintln!("auto-indexed {} chunks -> {}", index.len(), index_path.display());
        Ok(index)
    } else {
        bail!(
            "index not found at {}; run `disco-rag index --corpus {}` first or pass --auto-index",
            index_path.display(),
            corpus_path.display()
        );
    }
}

fn out_dir(args: &CommonArgs) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("reports"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn cmd_run(args: CommonArgs, perturb_run: bool) -> Result<i32> {
    let cfg = resolve_config(&args)?;
    if print_config_if_asked(&args, &cfg) {
        return Ok(0);
    }
    if perturb_run && cfg.perturb.is_empty() {
        bail!("perturb-run requires at least one --perturb target:kind:fraction:seed");
    }
    let (corpus_path, docs) = require_corpus(&args)?;
    let queries = require_queries(&args)?;
    let index = prepare_index(&args, &cfg, &corpus_path, &docs)?;
    let client = Arc::new(build_client(&cfg, args.mock_fixtures.as_deref())?);
    let (pipeline, warnings) = Pipeline::with_index(cfg.clone(), docs, index, client)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }

    let report = pipeline.run_report(&queries)?;
    let dir = out_dir(&args)?;
    let run = run_id(&report.config_snapshot);
    let report_path = fresh_path(&dir, "report", &run, "jsonl");
    write_report(&report, &report_path)?;
    let csv_path = fresh_path(&dir, "aggregate", &run, "csv");
    std::fs::write(&csv_path, aggregate_csv(&report.aggregate))?;
    if perturb_run {
        let manifest_path = fresh_path(&dir, "manifest", &run, "jsonl");
        let mut body = String::new();
        for q in &queries {
            for spec in &cfg.perturb {
                body.push_str(&serde_json::to_string(&serde_json::json!({
                    "query_id": q.query_id,
                    "target": spec.target,
                    "kind": spec.kind,
                    "fraction": spec.fraction,
                    "seed": spec.seed,
                }))?);
                body.push('\n');
            }
        }
        std::fs::write(&manifest_path, body)?;
        println!("manifest: {}", manifest_path.display());
    }

    println!("{}", aggregate_text_table(&report.aggregate));
    println!("report: {}", report_path.display());
    println!("aggregate: {}", csv_path.display());
    let failures: u64 = report.aggregate.iter().map(|a| a.failures).sum();
    if failures > 0 {
        eprintln!("{failures} query(ies) failed; see failure reasons in the report");
        Ok(2)
    } else {
        Ok(0)
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let base = resolve_config(&args.common)?;
    if print_config_if_asked(&args.common, &base) {
        return Ok(0);
    }
    let (_, docs) = require_corpus(&args.common)?;
    let queries = require_queries(&args.common)?;

    let values: Vec<&str> = args.values.split(',').map(str::trim).collect();
    let mut grid = Vec::new();
    for value in &values {
        let mut cfg = base.clone();
        match args.vary.as_str() {
            "chunk-size" | "chunk_size" => cfg.chunk_size = value.parse()?,
            "top-k" | "top_k" => cfg.top_k = value.parse()?,
            "noise" | "noise-ratio" | "noise_ratio" => cfg.noise_ratio = value.parse()?,
            other => bail!("unknown sweep knob {other:?} (expected chunk-size, top-k, or noise)"),
        }
        grid.push(cfg);
    }

    let fixtures = args.common.mock_fixtures.clone();
    let make_client = {
        let base = base.clone();
        move || build_client(&base, fixtures.as_deref()).expect("backends resolved before sweep")
    };
    // Fail fast on backend misconfiguration before the sweep starts.
    build_client(&base, args.common.mock_fixtures.as_deref())?;

    let reports = disco_rag::pipeline::run_suite(&docs, &queries, &grid, &make_client)?;

    let dir = out_dir(&args.common)?;
    let run = run_id(&base.snapshot());
    let mut failures = 0u64;
    for report in &reports {
        let cell_run = format!("{run}-{}", config_hash(&report.config_snapshot));
        let path = fresh_path(&dir, "report", &cell_run, "jsonl");
        write_report(report, &path)?;
        failures += report.aggregate.iter().map(|a| a.failures).sum::<u64>();
    }
    let summary_path = fresh_path(&dir, "sweep-summary", &run, "csv");
    std::fs::write(&summary_path, sweep_summary_csv(&reports))?;
    println!(
        "swept {} over {:?}: {} reports -> {}",
        args.vary,
        values,
        reports.len(),
        summary_path.display()
    );
    Ok(if failures > 0 { 2 } else { 0 })
}

#[derive(serde::Deserialize)]
struct BareAnswer {
    query_id: String,
    #[serde(default)]
    method: Option<Method>,
    answer: String,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let cfg = resolve_config(&args.common)?;
    if print_config_if_asked(&args.common, &cfg) {
        return Ok(0);
    }
    let queries = require_queries(&args.common)?;
    let by_id: std::collections::BTreeMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let docs: std::collections::BTreeMap<String, Document> = match &args.common.corpus {
        Some(path) => load_corpus(path)?
            .into_iter()
            .map(|d| (d.doc_id.clone(), d))
            .collect(),
        None => Default::default(),
    };

    // Accept either a full report or bare answer lines.
    let (mut records, snapshot) = match load_report(&args.answers) {
        Ok(report) => (report.per_query, report.config_snapshot),
        Err(_) => {
            let raw = std::fs::read_to_string(&args.answers)
                .with_context(|| format!("cannot read {}", args.answers.display()))?;
            let mut records = Vec::new();
            let snapshot = cfg.snapshot();
            let hash = config_hash(&snapshot);
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let bare: BareAnswer = serde_json::from_str(line).with_context(|| {
                    format!("{} line {}: not a report or answer line", args.answers.display(), i + 1)
                })?;
                records.push(QueryReport {
                    schema_version: SCHEMA_VERSION,
                    config_hash: hash.clone(),
                    query_id: bare.query_id,
                    method: bare.method.unwrap_or(cfg.method),
                    dataset: "evaluate".to_string(),
                    answer: Some(bare.answer),
                    plan: None,
                    failure: None,
                    metrics: MetricScores::default(),
                    accounting: Default::default(),
                    retrieved: vec![],
                    injected: vec![],
                    warnings: vec![],
                    judge_excluded: false,
                });
            }
            (records, snapshot)
        }
    };

    let client = build_client(&cfg, args.common.mock_fixtures.as_deref())?;
    let mut missing = 0usize;
    for record in &mut records {
        let Some(answer) = record.answer.clone() else { continue };
        let Some(query) = by_id.get(record.query_id.as_str()) else {
            missing += 1;
            record
                .warnings
                .push("no matching query; metrics not recomputed".to_string());
            continue;
        };
        let mut metrics = MetricScores::default();
        if !query.golds.is_empty() {
            metrics.em = disco_rag::metrics::exact_match(&answer, &query.golds).ok();
            metrics.rouge_l = disco_rag::metrics::rouge_l_multi(&answer, &query.golds).ok();
            metrics.dr = disco_rag::metrics::dr_score(&answer, &query.golds).ok();
            if let Some(doc) = query.doc_id.as_ref().and_then(|id| docs.get(id)) {
                metrics.sari = disco_rag::metrics::sari(&doc.text, &answer, &query.golds).ok();
            }
        }
        if let Some(judge) = &cfg.judge_backend {
            let reference = query.golds.join(" | ");
            match disco_rag::metrics::llm_judge_score(
                &client,
                judge,
                &record.query_id,
                &query.question,
                &answer,
                &reference,
                cfg.max_attempts,
            )? {
                Some(score) => metrics.llm_score = Some(score),
                None => record.judge_excluded = true,
            }
        }
        record.metrics = metrics;
    }
    if missing > 0 {
        eprintln!("warning: {missing} answer(s) had no matching query");
    }

    let report = aggregate_report(records, snapshot)?;
    let dir = out_dir(&args.common)?;
    let run = run_id(&report.config_snapshot);
    let path = fresh_path(&dir, "evaluation", &run, "jsonl");
    write_report(&report, &path)?;
    println!("{}", aggregate_text_table(&report.aggregate));
    println!("evaluation: {}", path.display());
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in &args.reports {
        reports.push(load_report(path)?);
    }
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;

    let merged: Vec<_> = reports.iter().flat_map(|r| r.aggregate.clone()).collect();
    let table = aggregate_text_table(&merged);
    println!("{table}");

    let aggregate_path = dir.join("merged-aggregate.csv");
    std::fs::write(&aggregate_path, aggregate_csv(&merged))?;
    let efficiency_path = dir.join("merged-efficiency.csv");
    std::fs::write(&efficiency_path, efficiency_csv(&reports))?;
    let table_path = dir.join("merged-aggregate.txt");
    std::fs::write(&table_path, format!("{table}\n"))?;
    println!("aggregate: {}", aggregate_path.display());
    println!("efficiency: {}", efficiency_path.display());
    Ok(0)
}
