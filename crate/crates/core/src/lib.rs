//! Discourse-aware retrieval-augmented generation engine.
//!
//! The pipeline retrieves evidence chunks from a corpus, builds an RST tree
//! inside every chunk and a directed rhetorical graph across chunks through
//! structured LLM calls, derives a discourse-aware plan from those structures,
//! and generates the final answer conditioned on all of them. Baseline
//! generation strategies, seeded noise/perturbation experiments, and the
//! evaluation metrics live alongside so every experiment is runnable offline
//! against the deterministic mock backend.
//!
//! Module map:
//! - [`corpus`] — document ingestion, tokenization, fixed-size chunking
//! - [`retrieval`] — embeddings, exact top-k cosine retrieval, noise injection
//! - [`llm`] — chat backends (mock + HTTP), retry-with-repair, usage ledger
//! - [`discourse`] — intra-chunk RST trees and the inter-chunk graph
//! - [`planning`] — blueprint generation and step splitting
//! - [`generation`] — the discourse-guided generator and all baselines
//! - [`perturb`] — seeded structural perturbation operators
//! - [`metrics`] — EM, ROUGE-L, DR, SARI, and the LLM judge
//! - [`pipeline`] — end-to-end orchestration and sweeps
//! - [`report`] — report records, aggregation, file formats
//! - [`synth`] — deterministic synthetic corpora for offline experiments

pub mod corpus;
pub mod discourse;
pub mod generation;
pub mod llm;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod planning;
pub mod prompts;
pub mod report;
pub mod retrieval;
pub mod synth;
pub mod text;
