//! Deterministic synthetic corpora and query sets for offline experiments
//! and tests. Everything is a pure function of the seed.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{tokenize, Document};
use crate::pipeline::QueryRecord;
use crate::text::split_sentences;

const VOCAB: [&str; 48] = [
    "reservoir", "turbine", "aquifer", "catalyst", "glacier", "harvest", "lattice", "current",
    "voltage", "membrane", "protein", "enzyme", "sediment", "basalt", "stratum", "isotope",
    "neutron", "plasma", "orbit", "comet", "nebula", "quasar", "canopy", "lichen", "fungus",
    "pollen", "nectar", "migration", "plumage", "burrow", "tundra", "monsoon", "estuary",
    "delta", "erosion", "magma", "fissure", "geyser", "aurora", "eclipse", "tide", "reef",
    "atoll", "plankton", "krill", "kelp", "abyss", "trench",
];

const CONNECTIVES: [&str; 8] = [
    "however", "therefore", "meanwhile", "moreover", "in contrast", "as a result",
    "for example", "in addition",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(5..12);
    let mut words = Vec::with_capacity(len + 1);
    if rng.gen_bool(0.25) {
        words.push(CONNECTIVES[rng.gen_range(0..CONNECTIVES.len())].to_string());
    }
    for _ in 0..len {
        words.push(VOCAB[rng.gen_range(0..VOCAB.len())].to_string());
    }
    let mut text = words.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    let terminator = match rng.gen_range(0..10) {
        0 => "!",
        1 => "?",
        _ => ".",
    };
    format!("{text}{terminator}")
}

/// Documents of roughly `tokens_per_doc` default-tokenizer tokens each.
pub fn synth_corpus(n_docs: usize, tokens_per_doc: Range<usize>, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let target = rng.gen_range(tokens_per_doc.clone());
            let mut text = String::new();
            while tokenize(&text).len() < target {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&sentence(&mut rng));
            }
            Document {
                doc_id: format!("doc{i:03}"),
                text,
                lang: Some("en".to_string()),
            }
        })
        .collect()
}

/// Queries whose gold answer is a sentence drawn from the target document,
/// cycling over documents so closed-domain runs exercise every source.
pub fn synth_queries(docs: &[Document], n: usize, seed: u64) -> Vec<QueryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let doc = &docs[i % docs.len()];
            let sentences = split_sentences(&doc.text);
            let gold = sentences[rng.gen_range(0..sentences.len())].clone();
            let topic = tokenize(&gold)
                .into_iter()
                .find(|t| t.len() > 4)
                .unwrap_or_else(|| "topic".to_string());
            QueryRecord {
                query_id: format!("q{i:03}"),
                question: format!("What does {} report about {topic}?", doc.doc_id),
                golds: vec![gold],
                doc_id: Some(doc.doc_id.clone()),
                dataset: "synthetic".to_string(),
            }
        })
        .collect()
}
