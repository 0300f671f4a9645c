//! Document ingestion, tokenization, and fixed-size chunking.
//!
//! Corpus files are JSONL, one `{"doc_id", "text", "lang"?}` object per line.
//! Chunking is greedy left-to-right over tokenizer tokens with no overlap;
//! every chunk except possibly the last holds exactly `chunk_size` tokens.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::is_punct;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("document {0:?} has empty text")]
    EmptyDocument(String),
    #[error("chunk_size must be >= 1")]
    ZeroChunkSize,
}

/// One source document of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

/// A contiguous token span of one document; the unit of retrieval, parsing,
/// and graph nodes. `token_span` is `[start, end)` in tokenizer tokens, and
/// `text` is the span's tokens joined with single spaces (the canonical chunk
/// text every downstream prompt and cache key is derived from).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub token_span: (usize, usize),
    pub text: String,
}

impl Chunk {
    /// Chunk ids are `{doc_id}#{ordinal:04}`, so lexicographic order equals
    /// document order for up to 10,000 chunks per document.
    pub fn id_for(doc_id: &str, ordinal: usize) -> String {
        format!("{doc_id}#{ordinal:04}")
    }

    /// Recovers the owning doc_id from a chunk id (text before the last `#`).
    pub fn doc_of(chunk_id: &str) -> &str {
        chunk_id.rsplit_once('#').map(|(d, _)| d).unwrap_or(chunk_id)
    }
}

/// A deterministic text → token-sequence rule set.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Default rule: split on Unicode whitespace, then peel leading and trailing
/// punctuation characters into their own tokens. Internal punctuation
/// (hyphens, apostrophes) stays attached.
#[derive(Debug, Default, Clone, Copy)]
pub struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn name(&self) -> &str {
        "whitespace-punct-v1"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = word.chars().collect();
            let mut start = 0;
            let mut end = chars.len();
            while start < end && is_punct(chars[start]) {
                start += 1;
            }
            while end > start && is_punct(chars[end - 1]) {
                end -= 1;
            }
            for &c in &chars[..start] {
                out.push(c.to_string());
            }
            if start < end {
                out.push(chars[start..end].iter().collect());
            }
            for &c in &chars[end..] {
                out.push(c.to_string());
            }
        }
        out
    }
}

/// Tokenizes with the default rule set. This is the tokenizer used for chunk
/// sizing, token accounting, and token-level metrics unless a caller
/// substitutes its own [`Tokenizer`].
pub fn tokenize(text: &str) -> Vec<String> {
    DefaultTokenizer.tokenize(text)
}

/// Joins tokens with single spaces. Inverse of [`tokenize`] for token
/// sequences without internal whitespace.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Loads a JSONL corpus, preserving file order. Blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&raw)
}

/// Parses corpus JSONL from an in-memory string; line numbers are 1-based.
pub fn parse_corpus(raw: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if doc.text.trim().is_empty() {
            return Err(CorpusError::EmptyDocument(doc.doc_id));
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Splits one document into chunks of exactly `chunk_size` tokens (last chunk
/// possibly shorter), greedy left-to-right, no overlap.
pub fn chunk_document(
    doc: &Document,
    chunk_size: usize,
    tok: &dyn Tokenizer,
) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size == 0 {
        return Err(CorpusError::ZeroChunkSize);
    }
    let tokens = tok.tokenize(&doc.text);
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut ordinal = 0;
    while start < tokens.len() {
        let end = (start + chunk_size).min(tokens.len());
        chunks.push(Chunk {
            chunk_id: Chunk::id_for(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            token_span: (start, end),
            text: detokenize(&tokens[start..end]),
        });
        start = end;
        ordinal += 1;
    }
    Ok(chunks)
}

/// Chunks an entire corpus with the default tokenizer.
pub fn chunk_corpus(docs: &[Document], chunk_size: usize) -> Result<Vec<Chunk>, CorpusError> {
    let tok = DefaultTokenizer;
    let mut all = Vec::new();
    for doc in docs {
        all.extend(chunk_document(doc, chunk_size, &tok)?);
    }
    Ok(all)
}
