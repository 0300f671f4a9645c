//! Acceptance suite, part 2: binary-level criteria (10–12). Each test drives
//! the `disco-rag` binary exactly as a user would and prints an
//! `ACCEPTANCE <n> PASS` line.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use disco_rag::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_disco-rag"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn write_world(dir: &Path, docs: usize, queries: usize, seed: u64) -> (PathBuf, PathBuf) {
    let corpus = synth::synth_corpus(docs, 200..400, seed);
    let query_set = synth::synth_queries(&corpus, queries, seed + 1);
    let corpus_path = dir.join("corpus.jsonl");
    let queries_path = dir.join("queries.jsonl");
    let mut body = String::new();
    for doc in &corpus {
        body.push_str(&serde_json::to_string(doc).unwrap());
        body.push('\n');
    }
    std::fs::write(&corpus_path, body).unwrap();
    let mut body = String::new();
    for q in &query_set {
        body.push_str(&serde_json::to_string(q).unwrap());
        body.push('\n');
    }
    std::fs::write(&queries_path, body).unwrap();
    (corpus_path, queries_path)
}

fn only_file_with(dir: &Path, prefix: &str) -> PathBuf {
    let mut matches: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    assert_eq!(matches.len(), 1, "expected exactly one {prefix}* in {dir:?}");
    matches.pop().unwrap()
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, queries) = write_world(dir.path(), 6, 20, 0x10);
    let corpus = corpus.to_str().unwrap();
    let queries = queries.to_str().unwrap();
    let cache = dir.path().join("trees.jsonl");
    let cache = cache.to_str().unwrap();

    run_ok(&["index", "--corpus", corpus, "--chunk-size", "64"]);
    // Trees are constructed offline once; both runs then see a warm cache.
    run_ok(&["parse-trees", "--corpus", corpus, "--chunk-size", "64", "--cache", cache]);

    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");
    for out in [&out1, &out2] {
        run_ok(&[
            "run",
            "--corpus",
            corpus,
            "--queries",
            queries,
            "--method",
            "disco",
            "--chunk-size",
            "64",
            "--top-k",
            "5",
            "--seed",
            "3",
            "--cache",
            cache,
            "--out",
            out.to_str().unwrap(),
        ]);
    }

    let report1 = std::fs::read(only_file_with(&out1, "report-")).unwrap();
    let report2 = std::fs::read(only_file_with(&out2, "report-")).unwrap();
    assert!(!report1.is_empty());
    assert_eq!(report1, report2, "report JSONL must be byte-identical");

    let csv1 = std::fs::read(only_file_with(&out1, "aggregate-")).unwrap();
    let csv2 = std::fs::read(only_file_with(&out2, "aggregate-")).unwrap();
    assert_eq!(csv1, csv2, "aggregate CSV must be byte-identical");

    println!(
        "ACCEPTANCE 10 PASS: two disco runs over 20 queries produced byte-identical report JSONL ({} bytes) and CSV",
        report1.len()
    );
}

// ---------------------------------------------------------------------------
// 11. Cache effectiveness
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_cache_effectiveness() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = write_world(dir.path(), 5, 5, 0x11);
    let corpus = corpus.to_str().unwrap();
    let cache = dir.path().join("trees.jsonl");
    let cache = cache.to_str().unwrap();

    let first = run_ok(&["parse-trees", "--corpus", corpus, "--chunk-size", "64", "--cache", cache]);
    let first_stdout = String::from_utf8_lossy(&first.stdout);
    assert!(
        first_stdout.contains("0 hits"),
        "first pass should be all misses: {first_stdout}"
    );
    assert!(!first_stdout.contains("(0 rst_parse calls)"));

    let second =
        run_ok(&["parse-trees", "--corpus", corpus, "--chunk-size", "64", "--cache", cache]);
    let second_stdout = String::from_utf8_lossy(&second.stdout);
    assert!(
        second_stdout.contains("0 parsed, 0 fallbacks (0 rst_parse calls)"),
        "second pass must record zero rst_parse calls: {second_stdout}"
    );

    println!("ACCEPTANCE 11 PASS: second parse-trees invocation recorded zero rst_parse calls");
    println!("  first:  {}", first_stdout.trim());
    println!("  second: {}", second_stdout.trim());
}

// ---------------------------------------------------------------------------
// 12. Sweep harness
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_sweep_harness() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, queries) = write_world(dir.path(), 30, 20, 0x12);
    let corpus = corpus.to_str().unwrap();
    let queries = queries.to_str().unwrap();
    let cache = dir.path().join("trees.jsonl");
    let cache = cache.to_str().unwrap();

    let started = Instant::now();
    let sweeps: [(&str, &str, usize); 3] = [
        ("chunk-size", "128,256,512,1024", 4),
        ("top-k", "10,20,30,50", 4),
        ("noise", "0,0.2,0.4", 3),
    ];
    for (knob, values, cells) in sweeps {
        let out = dir.path().join(format!("sweep-{knob}"));
        run_ok(&[
            "sweep",
            "--corpus",
            corpus,
            "--queries",
            queries,
            "--method",
            "disco",
            "--seed",
            "9",
            "--cache",
            cache,
            "--vary",
            knob,
            "--values",
            values,
            "--out",
            out.to_str().unwrap(),
        ]);
        let summary = only_file_with(&out, "sweep-summary-");
        let body = std::fs::read_to_string(summary).unwrap();
        let rows = body.lines().count();
        assert_eq!(
            rows,
            cells + 1,
            "{knob} sweep must emit one summary row per cell plus header:\n{body}"
        );
        let reports = std::fs::read_dir(&out)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("report-"))
            .count();
        assert_eq!(reports, cells, "{knob} sweep must write one report per cell");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 300,
        "sweeps took {elapsed:?}, budget 5 minutes"
    );
    println!(
        "ACCEPTANCE 12 PASS: chunk-size/top-k/noise sweeps (11 cells) completed in {:.1}s with one summary row per cell",
        elapsed.as_secs_f64()
    );
}
