//! Report records, per-method aggregation, and the JSONL/CSV file formats.
//!
//! A report file is JSONL: one `{"type":"query", ...}` line per query in
//! input order, then a single `{"type":"aggregate", ...}` line holding the
//! per-method means and the resolved config snapshot. All content is
//! deterministic for a fixed configuration and seed set; nothing volatile
//! (timestamps, hostnames) is written inside the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generation::Method;
use crate::metrics::{RougeL, Sari};
use crate::planning::Blueprint;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to aggregate")]
    Empty,
    #[error("records carry mixed config snapshots ({0} and {1})")]
    MixedSnapshots(String, String),
    #[error("schema version {found} does not match expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("report file {path} has no aggregate line")]
    NoAggregate { path: String },
    #[error("report file {path} line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-instance metric values; absent entries were not computable for the
/// query (no judge configured, no source document for SARI, ...).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<RougeL>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sari: Option<Sari>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_score: Option<f64>,
}

/// Exact per-query accounting, summed from the usage ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    /// Attempt count of the final answer call(s), from provenance.
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub query_id: String,
    pub method: Method,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// The discourse-aware plan that conditioned generation (raw text plus
    /// derived steps), when the method produced one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Blueprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub metrics: MetricScores,
    pub accounting: Accounting,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injected: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// True when a judge was configured but returned no usable score.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_excluded: bool,
}

/// Per-method arithmetic means over the per-query records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub queries: u64,
    pub failures: u64,
    pub judge_exclusions: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sari: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_score: Option<f64>,
    pub calls_mean: f64,
    pub input_tokens_mean: f64,
    pub output_tokens_mean: f64,
    pub total_tokens_mean: f64,
    pub latency_ms_mean: f64,
    pub calls_total: u64,
    pub input_tokens_total: u64,
    pub output_tokens_total: u64,
    pub latency_ms_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub per_query: Vec<QueryReport>,
    pub aggregate: Vec<MethodAggregate>,
    pub config_snapshot: serde_json::Value,
}

/// Short content hash of a resolved configuration.
pub fn config_hash(snapshot: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(snapshot).expect("snapshot json");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Computes per-method means over the records and attaches the snapshot.
/// All records must share the snapshot's config hash.
pub fn aggregate_report(
    records: Vec<QueryReport>,
    config_snapshot: serde_json::Value,
) -> Result<EvalReport, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let expected_hash = config_hash(&config_snapshot);
    for record in &records {
        if record.config_hash != expected_hash {
            return Err(ReportError::MixedSnapshots(
                expected_hash,
                record.config_hash.clone(),
            ));
        }
    }
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();

    let mut aggregate = Vec::new();
    for method in methods {
        let rows: Vec<&QueryReport> = records.iter().filter(|r| r.method == method).collect();
        let n = rows.len() as u64;
        let calls_total: u64 = rows.iter().map(|r| r.accounting.calls).sum();
        let input_total: u64 = rows.iter().map(|r| r.accounting.input_tokens).sum();
        let output_total: u64 = rows.iter().map(|r| r.accounting.output_tokens).sum();
        let latency_total: u64 = rows.iter().map(|r| r.accounting.latency_ms).sum();
        aggregate.push(MethodAggregate {
            method,
            queries: n,
            failures: rows.iter().filter(|r| r.failure.is_some()).count() as u64,
            judge_exclusions: rows.iter().filter(|r| r.judge_excluded).count() as u64,
            em: mean_of(rows.iter().filter_map(|r| r.metrics.em)),
            rouge_l_f: mean_of(rows.iter().filter_map(|r| r.metrics.rouge_l.map(|x| x.f))),
            dr: mean_of(rows.iter().filter_map(|r| r.metrics.dr)),
            sari: mean_of(rows.iter().filter_map(|r| r.metrics.sari.map(|x| x.sari))),
            llm_score: mean_of(rows.iter().filter_map(|r| r.metrics.llm_score)),
            calls_mean: calls_total as f64 / n as f64,
            input_tokens_mean: input_total as f64 / n as f64,
            output_tokens_mean: output_total as f64 / n as f64,
            total_tokens_mean: (input_total + output_total) as f64 / n as f64,
            latency_ms_mean: latency_total as f64 / n as f64,
            calls_total,
            input_tokens_total: input_total,
            output_tokens_total: output_total,
            latency_ms_total: latency_total,
        });
    }
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        per_query: records,
        aggregate,
        config_snapshot,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Query(QueryReport),
    Aggregate {
        schema_version: u32,
        aggregate: Vec<MethodAggregate>,
        config_snapshot: serde_json::Value,
    },
}

/// Serializes a report to JSONL text.
pub fn report_to_jsonl(report: &EvalReport) -> String {
    let mut out = String::new();
    for record in &report.per_query {
        let line = ReportLine::Query(record.clone());
        out.push_str(&serde_json::to_string(&line).expect("report json"));
        out.push('\n');
    }
    let tail = ReportLine::Aggregate {
        schema_version: report.schema_version,
        aggregate: report.aggregate.clone(),
        config_snapshot: report.config_snapshot.clone(),
    };
    out.push_str(&serde_json::to_string(&tail).expect("report json"));
    out.push('\n');
    out
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), ReportError> {
    fs::write(path, report_to_jsonl(report)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_report(path: &Path) -> Result<EvalReport, ReportError> {
    let raw = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut per_query = Vec::new();
    let mut tail: Option<(u32, Vec<MethodAggregate>, serde_json::Value)> = None;
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine =
            serde_json::from_str(line).map_err(|e| ReportError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        match parsed {
            ReportLine::Query(q) => {
                if q.schema_version != SCHEMA_VERSION {
                    return Err(ReportError::SchemaVersion {
                        found: q.schema_version,
                        expected: SCHEMA_VERSION,
                    });
                }
                per_query.push(q);
            }
            ReportLine::Aggregate {
                schema_version,
                aggregate,
                config_snapshot,
            } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(ReportError::SchemaVersion {
                        found: schema_version,
                        expected: SCHEMA_VERSION,
                    });
                }
                tail = Some((schema_version, aggregate, config_snapshot));
            }
        }
    }
    let (schema_version, aggregate, config_snapshot) =
        tail.ok_or_else(|| ReportError::NoAggregate {
            path: path.display().to_string(),
        })?;
    Ok(EvalReport {
        schema_version,
        per_query,
        aggregate,
        config_snapshot,
    })
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub const AGGREGATE_CSV_HEADER: &str = "method,queries,failures,em,rouge_l_f,dr,sari,llm_score,judge_exclusions,calls_mean,input_tokens_mean,output_tokens_mean,total_tokens_mean,latency_ms_mean";

fn aggregate_csv_row(a: &MethodAggregate) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
        csv_escape(a.method.as_str()),
        a.queries,
        a.failures,
        fmt_opt(a.em),
        fmt_opt(a.rouge_l_f),
        fmt_opt(a.dr),
        fmt_opt(a.sari),
        fmt_opt(a.llm_score),
        a.judge_exclusions,
        a.calls_mean,
        a.input_tokens_mean,
        a.output_tokens_mean,
        a.total_tokens_mean,
        a.latency_ms_mean,
    )
}

/// The method-by-metric aggregate table as CSV.
pub fn aggregate_csv(aggregates: &[MethodAggregate]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for a in aggregates {
        out.push_str(&aggregate_csv_row(a));
        out.push('\n');
    }
    out
}

/// The same table as fixed-width text for terminal display.
pub fn aggregate_text_table(aggregates: &[MethodAggregate]) -> String {
    let header = [
        "method",
        "queries",
        "fail",
        "em",
        "rouge_l_f",
        "dr",
        "sari",
        "llm_score",
        "tokens",
        "latency_ms",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for a in aggregates {
        rows.push(vec![
            a.method.as_str().to_string(),
            a.queries.to_string(),
            a.failures.to_string(),
            fmt_opt(a.em),
            fmt_opt(a.rouge_l_f),
            fmt_opt(a.dr),
            fmt_opt(a.sari),
            fmt_opt(a.llm_score),
            format!("{:.1}", a.total_tokens_mean),
            format!("{:.1}", a.latency_ms_mean),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn snapshot_field(snapshot: &serde_json::Value, key: &str) -> String {
    match &snapshot[key] {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub const SWEEP_CSV_HEADER: &str = "config_hash,method,chunk_size,top_k,noise_ratio,seed,queries,failures,em,rouge_l_f,dr,sari,llm_score,calls_mean,total_tokens_mean,latency_ms_mean";

/// One row per (report, method): the sweep summary keyed by the varied knobs.
pub fn sweep_summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for report in reports {
        let hash = config_hash(&report.config_snapshot);
        for a in &report.aggregate {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4}\n",
                hash,
                a.method.as_str(),
                snapshot_field(&report.config_snapshot, "chunk_size"),
                snapshot_field(&report.config_snapshot, "top_k"),
                snapshot_field(&report.config_snapshot, "noise_ratio"),
                snapshot_field(&report.config_snapshot, "seed"),
                a.queries,
                a.failures,
                fmt_opt(a.em),
                fmt_opt(a.rouge_l_f),
                fmt_opt(a.dr),
                fmt_opt(a.sari),
                fmt_opt(a.llm_score),
                a.calls_mean,
                a.total_tokens_mean,
                a.latency_ms_mean,
            ));
        }
    }
    out
}

pub const EFFICIENCY_CSV_HEADER: &str =
    "top_k,method,queries,token_cost_mean,latency_ms_mean,calls_mean";

/// Token-cost and latency per top-k, mirroring the efficiency table layout.
pub fn efficiency_csv(reports: &[EvalReport]) -> String {
    let mut rows: Vec<(u64, String, u64, f64, f64, f64)> = Vec::new();
    for report in reports {
        let top_k = report.config_snapshot["top_k"].as_u64().unwrap_or(0);
        for a in &report.aggregate {
            rows.push((
                top_k,
                a.method.as_str().to_string(),
                a.queries,
                a.total_tokens_mean,
                a.latency_ms_mean,
                a.calls_mean,
            ));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut out = String::from(EFFICIENCY_CSV_HEADER);
    out.push('\n');
    for (top_k, method, queries, tokens, latency, calls) in rows {
        out.push_str(&format!(
            "{top_k},{method},{queries},{tokens:.4},{latency:.4},{calls:.4}\n"
        ));
    }
    out
}
