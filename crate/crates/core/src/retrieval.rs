//! Embedding-based exact top-k retrieval over chunks, plus the noise
//! injection protocol used by the robustness experiments.
//!
//! The index is exact (no ANN): vectors are L2-normalized at insert time and
//! scored by dot product, which equals cosine similarity on unit vectors.
//! Ties break by ascending chunk_id so rankings reproduce across runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Chunk};
use crate::text::fnv1a64;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no chunks to index")]
    EmptyInput,
    #[error("duplicate chunk_id {0:?}")]
    DuplicateChunkId(String),
    #[error("dimension mismatch for {chunk_id:?}: index dim {expected}, provider returned {got}")]
    DimensionMismatch {
        chunk_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding backend failed for {chunk_id:?}: {reason}")]
    Backend { chunk_id: String, reason: String },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("zero-norm embedding for {0:?}")]
    ZeroNorm(String),
    #[error("noise pool too small: need {required}, have {available}")]
    PoolTooSmall { required: usize, available: usize },
    #[error("noise pool overlaps retrieved set at {0:?}")]
    PoolOverlap(String),
    #[error("failed to access index file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed index file {path} at line {line}: {reason}")]
    MalformedIndex {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("index header mismatch: expected provider {expected_provider:?} dim {expected_dim}, file has {found_provider:?} dim {found_dim}")]
    HeaderMismatch {
        expected_provider: String,
        expected_dim: usize,
        found_provider: String,
        found_dim: usize,
    },
}

/// A deterministic text → vector backend.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError>;
}

/// Offline embedding backend: each lowercased token seeds a ChaCha8 stream
/// that contributes a pseudo-random vector, and the sum is normalized. Texts
/// sharing tokens land near each other, which is enough signal for the mock
/// pipeline, and the output depends only on the text.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dim: usize,
}

impl HashEmbedding {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn name(&self) -> &str {
        "hash-embed-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        use rand::Rng;
        let mut v = vec![0f32; self.dim];
        for token in tokenize(&text.to_lowercase()) {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()));
            for x in v.iter_mut() {
                *x += rng.gen_range(-1.0f32..1.0f32);
            }
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        Ok(v)
    }
}

fn l2_normalize(v: Vec<f32>, owner: &str) -> Result<Vec<f64>, RetrievalError> {
    let mut v: Vec<f64> = v.into_iter().map(f64::from).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(RetrievalError::ZeroNorm(owner.to_string()));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(v)
}

/// Immutable store of unit vectors keyed by chunk_id.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    provider_name: String,
    dim: usize,
    chunk_size: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl VectorIndex {
    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The chunk size the indexed corpus was chunked with; recorded so a
    /// loaded sidecar can be checked against the active configuration.
    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn vector(&self, chunk_id: &str) -> Option<&[f64]> {
        self.entries.get(chunk_id).map(|v| v.as_slice())
    }
}

/// One ranked retrieval entry. `injected` marks chunks substituted by the
/// noise protocol; their score is the NaN sentinel, serialized as null.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    #[serde(with = "nan_as_null")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub injected: bool,
}

impl PartialEq for ScoredChunk {
    fn eq(&self, other: &Self) -> bool {
        self.chunk_id == other.chunk_id
            && self.injected == other.injected
            && (self.score == other.score || (self.score.is_nan() && other.score.is_nan()))
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Ranked results for one query; scores are non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<ScoredChunk>,
    pub k: usize,
}

impl RetrievalResult {
    pub fn chunk_ids(&self) -> Vec<String> {
        self.ranked.iter().map(|s| s.chunk_id.clone()).collect()
    }
}

/// Embeds every chunk once and stores the normalized vectors.
pub fn build_index(
    chunks: &[Chunk],
    provider: &dyn EmbeddingProvider,
    chunk_size: usize,
) -> Result<VectorIndex, RetrievalError> {
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyInput);
    }
    let mut entries = BTreeMap::new();
    for chunk in chunks {
        let v = provider.embed(&chunk.text).map_err(|e| match e {
            RetrievalError::Backend { reason, .. } => RetrievalError::Backend {
                chunk_id: chunk.chunk_id.clone(),
                reason,
            },
            other => other,
        })?;
        if v.len() != provider.dim() {
            return Err(RetrievalError::DimensionMismatch {
                chunk_id: chunk.chunk_id.clone(),
                expected: provider.dim(),
                got: v.len(),
            });
        }
        let v = l2_normalize(v, &chunk.chunk_id)?;
        if entries.insert(chunk.chunk_id.clone(), v).is_some() {
            return Err(RetrievalError::DuplicateChunkId(chunk.chunk_id.clone()));
        }
    }
    Ok(VectorIndex {
        provider_name: provider.name().to_string(),
        dim: provider.dim(),
        chunk_size,
        entries,
    })
}

/// Exact top-k by cosine similarity; ties break by ascending chunk_id.
pub fn retrieve_topk(
    index: &VectorIndex,
    query_id: &str,
    query: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<RetrievalResult, RetrievalError> {
    retrieve_topk_scoped(index, query_id, query, k, provider, None)
}

/// Like [`retrieve_topk`] but optionally restricted to chunks of one document
/// (the closed-domain retrieval mode).
pub fn retrieve_topk_scoped(
    index: &VectorIndex,
    query_id: &str,
    query: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
    scope_doc: Option<&str>,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let qv = l2_normalize(provider.embed(query)?, "query")?;
    if qv.len() != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            chunk_id: "query".to_string(),
            expected: index.dim,
            got: qv.len(),
        });
    }
    let mut scored: Vec<ScoredChunk> = index
        .entries
        .iter()
        .filter(|(id, _)| scope_doc.map_or(true, |d| Chunk::doc_of(id) == d))
        .map(|(id, v)| ScoredChunk {
            chunk_id: id.clone(),
            score: dot(&qv, v),
            injected: false,
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    scored.truncate(k.min(scored.len()));
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranked: scored,
        k,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Replaces `round(ratio * k)` ranked entries with chunks sampled uniformly
/// without replacement from `pool`. Replacement positions are drawn with the
/// seeded generator; untouched entries keep their ranks. Injected entries
/// carry the NaN score sentinel and `injected = true`.
pub fn inject_noise(
    result: &RetrievalResult,
    pool: &BTreeSet<String>,
    ratio: f64,
    seed: u64,
) -> Result<RetrievalResult, RetrievalError> {
    for entry in &result.ranked {
        if pool.contains(&entry.chunk_id) {
            return Err(RetrievalError::PoolOverlap(entry.chunk_id.clone()));
        }
    }
    let n_replace = ((ratio * result.k as f64).round() as usize).min(result.ranked.len());
    if n_replace == 0 {
        return Ok(result.clone());
    }
    if pool.len() < n_replace {
        return Err(RetrievalError::PoolTooSmall {
            required: n_replace,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = rand::seq::index::sample(&mut rng, result.ranked.len(), n_replace).into_vec();
    let pool_vec: Vec<&String> = pool.iter().collect();
    let picks = rand::seq::index::sample(&mut rng, pool_vec.len(), n_replace).into_vec();
    let mut out = result.clone();
    for (pos, pick) in positions.into_iter().zip(picks) {
        out.ranked[pos] = ScoredChunk {
            chunk_id: pool_vec[pick].clone(),
            score: f64::NAN,
            injected: true,
        };
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    provider: String,
    dim: usize,
    chunk_size: usize,
    entries: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    chunk_id: String,
    vector: Vec<f64>,
}

/// Writes the index as a JSONL sidecar: a header line followed by one entry
/// per chunk.
pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), RetrievalError> {
    let io_err = |source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    let header = IndexHeader {
        provider: index.provider_name.clone(),
        dim: index.dim,
        chunk_size: index.chunk_size,
        entries: index.entries.len(),
    };
    writeln!(file, "{}", serde_json::to_string(&header).expect("header json")).map_err(io_err)?;
    for (chunk_id, vector) in &index.entries {
        let entry = IndexEntry {
            chunk_id: chunk_id.clone(),
            vector: vector.clone(),
        };
        writeln!(file, "{}", serde_json::to_string(&entry).expect("entry json")).map_err(io_err)?;
    }
    Ok(())
}

/// Loads a sidecar and verifies its header against the active provider.
pub fn load_index(path: &Path, provider: &dyn EmbeddingProvider) -> Result<VectorIndex, RetrievalError> {
    let raw = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = raw.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| RetrievalError::MalformedIndex {
        path: path.display().to_string(),
        line: 1,
        reason: "missing header".to_string(),
    })?;
    let header: IndexHeader =
        serde_json::from_str(header_line).map_err(|e| RetrievalError::MalformedIndex {
            path: path.display().to_string(),
            line: 1,
            reason: e.to_string(),
        })?;
    if header.provider != provider.name() || header.dim != provider.dim() {
        return Err(RetrievalError::HeaderMismatch {
            expected_provider: provider.name().to_string(),
            expected_dim: provider.dim(),
            found_provider: header.provider,
            found_dim: header.dim,
        });
    }
    let mut entries = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let entry: IndexEntry =
            serde_json::from_str(line).map_err(|e| RetrievalError::MalformedIndex {
                path: path.display().to_string(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if entry.vector.len() != header.dim {
            return Err(RetrievalError::DimensionMismatch {
                chunk_id: entry.chunk_id,
                expected: header.dim,
                got: entry.vector.len(),
            });
        }
        entries.insert(entry.chunk_id, entry.vector);
    }
    Ok(VectorIndex {
        provider_name: header.provider,
        dim: header.dim,
        chunk_size: header.chunk_size,
        entries,
    })
}

/// Test/experiment provider returning pre-assigned vectors by exact text.
#[derive(Debug, Clone, Default)]
pub struct FixedEmbedding {
    pub dim: usize,
    pub vectors: Arc<BTreeMap<String, Vec<f32>>>,
}

impl FixedEmbedding {
    pub fn new(dim: usize, pairs: Vec<(String, Vec<f32>)>) -> Self {
        Self {
            dim,
            vectors: Arc::new(pairs.into_iter().collect()),
        }
    }
}

impl EmbeddingProvider for FixedEmbedding {
    fn name(&self) -> &str {
        "fixed-embed"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| RetrievalError::Backend {
                chunk_id: text.chars().take(32).collect(),
                reason: "no fixed vector for text".to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.to_string(),
            doc_id: Chunk::doc_of(id).to_string(),
            ordinal: 0,
            token_span: (0, 1),
            text: text.to_string(),
        }
    }

    fn fixed_ab() -> (Vec<Chunk>, FixedEmbedding) {
        let chunks = vec![chunk("a", "alpha"), chunk("b", "beta")];
        let provider = FixedEmbedding::new(
            2,
            vec![
                ("alpha".into(), vec![1.0, 0.0]),
                ("beta".into(), vec![0.0, 1.0]),
                ("q".into(), vec![1.0, 0.0]),
            ],
        );
        (chunks, provider)
    }

    #[test]
    fn build_index_normalizes_and_checks() {
        let provider = HashEmbedding::new(4);
        let chunks = vec![chunk("a", "one two"), chunk("b", "three"), chunk("c", "four")];
        let index = build_index(&chunks, &provider, 256).unwrap();
        assert_eq!(index.len(), 3);
        for id in ["a", "b", "c"] {
            let norm: f64 = index
                .vector(id)
                .unwrap()
                .iter()
                .map(|x| (*x as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }

        let dup = vec![chunk("a", "x"), chunk("a", "y")];
        assert!(matches!(
            build_index(&dup, &provider, 256),
            Err(RetrievalError::DuplicateChunkId(id)) if id == "a"
        ));

        // Provider that lies about its dimension.
        struct Lying;
        impl EmbeddingProvider for Lying {
            fn name(&self) -> &str {
                "lying"
            }
            fn dim(&self) -> usize {
                4
            }
            fn embed(&self, _: &str) -> Result<Vec<f32>, RetrievalError> {
                Ok(vec![1.0; 5])
            }
        }
        assert!(matches!(
            build_index(&[chunk("a", "x")], &Lying, 256),
            Err(RetrievalError::DimensionMismatch { expected: 4, got: 5, .. })
        ));
    }

    #[test]
    fn retrieve_hand_computed_scores() {
        let (chunks, provider) = fixed_ab();
        let index = build_index(&chunks, &provider, 256).unwrap();
        let res = retrieve_topk(&index, "q1", "q", 2, &provider).unwrap();
        assert_eq!(res.ranked.len(), 2);
        assert_eq!(res.ranked[0].chunk_id, "a");
        assert!((res.ranked[0].score - 1.0).abs() < 1e-12);
        assert_eq!(res.ranked[1].chunk_id, "b");
        assert!(res.ranked[1].score.abs() < 1e-12);

        // k larger than index size clamps.
        let res = retrieve_topk(&index, "q1", "q", 10, &provider).unwrap();
        assert_eq!(res.ranked.len(), 2);
        assert_eq!(res.k, 10);

        assert!(matches!(
            retrieve_topk(&index, "q1", "q", 0, &provider),
            Err(RetrievalError::ZeroK)
        ));
    }

    #[test]
    fn ties_break_by_ascending_chunk_id() {
        let chunks = vec![chunk("z", "same"), chunk("a", "same2"), chunk("m", "same3")];
        let provider = FixedEmbedding::new(
            2,
            vec![
                ("same".into(), vec![1.0, 0.0]),
                ("same2".into(), vec![1.0, 0.0]),
                ("same3".into(), vec![1.0, 0.0]),
                ("q".into(), vec![1.0, 0.0]),
            ],
        );
        let index = build_index(&chunks, &provider, 256).unwrap();
        let res = retrieve_topk(&index, "q1", "q", 3, &provider).unwrap();
        let ids: Vec<_> = res.ranked.iter().map(|s| s.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "m", "z"]);
    }

    #[test]
    fn scoped_retrieval_filters_by_doc() {
        let provider = HashEmbedding::new(8);
        let chunks = vec![
            chunk("d1#0000", "apple banana"),
            chunk("d1#0001", "cherry"),
            chunk("d2#0000", "apple banana"),
        ];
        let index = build_index(&chunks, &provider, 256).unwrap();
        let res =
            retrieve_topk_scoped(&index, "q", "apple", 10, &provider, Some("d1")).unwrap();
        assert!(res.ranked.iter().all(|s| Chunk::doc_of(&s.chunk_id) == "d1"));
        assert_eq!(res.ranked.len(), 2);
    }

    #[test]
    fn matches_linear_scan_oracle() {
        // Independent oracle: linear scan over the stored vectors computing
        // the full cosine formula dot/(|a||b|), same tie rule.
        let provider = HashEmbedding::new(16);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..60);
            let chunks: Vec<Chunk> = (0..n)
                .map(|i| {
                    let words: Vec<String> =
                        (0..rng.gen_range(1..8)).map(|_| format!("w{}", rng.gen_range(0..30))).collect();
                    chunk(&format!("c{i:03}"), &words.join(" "))
                })
                .collect();
            let index = build_index(&chunks, &provider, 256).unwrap();
            let query = format!("w{} w{}", rng.gen_range(0..30), rng.gen_range(0..30));
            for k in [1usize, 3, 10] {
                let got = retrieve_topk(&index, "q", &query, k, &provider).unwrap();
                let qv: Vec<f64> =
                    provider.embed(&query).unwrap().into_iter().map(f64::from).collect();
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let qn = norm(&qv);
                let mut oracle: Vec<(String, f64)> = chunks
                    .iter()
                    .map(|c| {
                        let cv: Vec<f64> = provider
                            .embed(&c.text)
                            .unwrap()
                            .into_iter()
                            .map(f64::from)
                            .collect();
                        let d: f64 = qv.iter().zip(&cv).map(|(a, b)| a * b).sum();
                        (c.chunk_id.clone(), d / (qn * norm(&cv)))
                    })
                    .collect();
                oracle.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
                });
                let want: Vec<&String> = oracle.iter().take(k).map(|(id, _)| id).collect();
                let got_ids: Vec<&String> = got.ranked.iter().map(|s| &s.chunk_id).collect();
                assert_eq!(got_ids, want);
                // Normalized dot product vs full cosine formula.
                for (s, (_, oscore)) in got.ranked.iter().zip(oracle.iter()) {
                    assert!((s.score - oscore).abs() < 1e-9);
                }
            }
        }
    }

    fn result_k10() -> RetrievalResult {
        RetrievalResult {
            query_id: "q".into(),
            ranked: (0..10)
                .map(|i| ScoredChunk {
                    chunk_id: format!("r{i}"),
                    score: 1.0 - i as f64 * 0.05,
                    injected: false,
                })
                .collect(),
            k: 10,
        }
    }

    fn pool_of(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn noise_counts_and_determinism() {
        let res = result_k10();
        let pool = pool_of(20);
        let noisy = inject_noise(&res, &pool, 0.2, 42).unwrap();
        assert_eq!(noisy.ranked.iter().filter(|s| s.injected).count(), 2);
        for s in noisy.ranked.iter().filter(|s| s.injected) {
            assert!(pool.contains(&s.chunk_id));
            assert!(s.score.is_nan());
        }
        // Untouched entries keep their positions.
        for (orig, new) in res.ranked.iter().zip(noisy.ranked.iter()) {
            if !new.injected {
                assert_eq!(orig.chunk_id, new.chunk_id);
            }
        }
        let again = inject_noise(&res, &pool, 0.2, 42).unwrap();
        assert_eq!(noisy, again);
        let other = inject_noise(&res, &pool, 0.4, 42).unwrap();
        assert_eq!(other.ranked.iter().filter(|s| s.injected).count(), 4);

        // Identity at ratio 0.
        let same = inject_noise(&res, &pool, 0.0, 7).unwrap();
        assert_eq!(same, res);
    }

    #[test]
    fn noise_error_cases() {
        let res = result_k10();
        assert!(matches!(
            inject_noise(&res, &pool_of(1), 0.4, 1),
            Err(RetrievalError::PoolTooSmall { required: 4, available: 1 })
        ));
        let mut overlapping = pool_of(5);
        overlapping.insert("r3".into());
        assert!(matches!(
            inject_noise(&res, &overlapping, 0.2, 1),
            Err(RetrievalError::PoolOverlap(id)) if id == "r3"
        ));
    }

    #[test]
    fn index_persistence_round_trip() {
        let provider = HashEmbedding::new(8);
        let chunks = vec![chunk("a", "one"), chunk("b", "two")];
        let index = build_index(&chunks, &provider, 128).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path, &provider).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.chunk_size(), 128);
        assert_eq!(loaded.vector("a"), index.vector("a"));

        let other = HashEmbedding::new(16);
        assert!(matches!(
            load_index(&path, &other),
            Err(RetrievalError::HeaderMismatch { .. })
        ));
    }
}
