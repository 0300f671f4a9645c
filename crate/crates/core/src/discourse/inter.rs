//! Inter-chunk rhetorical graph: listwise prompt assembly, relation-line
//! parsing, validation, and the shallow discourse-marker variant.
//!
//! A graph is complete by construction: every ordered pair of distinct chunk
//! positions carries exactly one label, with UNRELATED as the explicit
//! no-relation label. Missing pairs in an LLM transcript are filled with
//! UNRELATED (with a warning) because the prompt demands full coverage.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::llm::{CallTag, LlmRequest};
use crate::prompts;

#[derive(Debug, Error)]
pub enum InterError {
    #[error("need at least 2 chunks for a rhetorical graph, got {0}")]
    DegenerateInput(usize),
    #[error("chunk index {found} outside 1..={k}")]
    IndexOutOfRange { found: usize, k: usize },
    #[error("self edge ({0}, {0}) is not allowed")]
    SelfEdge(usize),
    #[error("unknown relation label {0:?}")]
    UnknownLabel(String),
    #[error("unknown discourse marker {0:?}")]
    UnknownMarker(String),
    #[error("no parsable relation lines in output")]
    NoParsableLines,
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
}

/// The closed set of inter-chunk relation labels; UNRELATED is explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InterRelation {
    Supports,
    Contradicts,
    Elaborates,
    Exemplifies,
    Causes,
    ResultsFrom,
    Enables,
    Prevents,
    Precedes,
    Follows,
    Simultaneous,
    BackgroundFor,
    Generalizes,
    Specifies,
    ComparesWith,
    ContrastsWith,
    Supplements,
    Replaces,
    Motivates,
    Justifies,
    Unrelated,
}

impl InterRelation {
    pub const ALL: [InterRelation; 21] = [
        InterRelation::Supports,
        InterRelation::Contradicts,
        InterRelation::Elaborates,
        InterRelation::Exemplifies,
        InterRelation::Causes,
        InterRelation::ResultsFrom,
        InterRelation::Enables,
        InterRelation::Prevents,
        InterRelation::Precedes,
        InterRelation::Follows,
        InterRelation::Simultaneous,
        InterRelation::BackgroundFor,
        InterRelation::Generalizes,
        InterRelation::Specifies,
        InterRelation::ComparesWith,
        InterRelation::ContrastsWith,
        InterRelation::Supplements,
        InterRelation::Replaces,
        InterRelation::Motivates,
        InterRelation::Justifies,
        InterRelation::Unrelated,
    ];

    /// The 20 labels other than UNRELATED.
    pub fn labeled() -> impl Iterator<Item = InterRelation> {
        Self::ALL.into_iter().filter(|r| *r != InterRelation::Unrelated)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InterRelation::Supports => "SUPPORTS",
            InterRelation::Contradicts => "CONTRADICTS",
            InterRelation::Elaborates => "ELABORATES",
            InterRelation::Exemplifies => "EXEMPLIFIES",
            InterRelation::Causes => "CAUSES",
            InterRelation::ResultsFrom => "RESULTS_FROM",
            InterRelation::Enables => "ENABLES",
            InterRelation::Prevents => "PREVENTS",
            InterRelation::Precedes => "PRECEDES",
            InterRelation::Follows => "FOLLOWS",
            InterRelation::Simultaneous => "SIMULTANEOUS",
            InterRelation::BackgroundFor => "BACKGROUND_FOR",
            InterRelation::Generalizes => "GENERALIZES",
            InterRelation::Specifies => "SPECIFIES",
            InterRelation::ComparesWith => "COMPARES_WITH",
            InterRelation::ContrastsWith => "CONTRASTS_WITH",
            InterRelation::Supplements => "SUPPLEMENTS",
            InterRelation::Replaces => "REPLACES",
            InterRelation::Motivates => "MOTIVATES",
            InterRelation::Justifies => "JUSTIFIES",
            InterRelation::Unrelated => "UNRELATED",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        let upper = token.trim().to_uppercase().replace(' ', "_");
        Self::ALL.iter().copied().find(|r| r.as_str() == upper)
    }
}

impl std::fmt::Display for InterRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Directed, fully labeled graph over the retrieved chunks. Edge keys are
/// 1-based positions into `nodes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RhetoricalGraph {
    nodes: Vec<String>,
    edges: BTreeMap<(usize, usize), InterRelation>,
}

impl RhetoricalGraph {
    /// Complete graph where everything is UNRELATED; the degenerate and
    /// retry-exhausted substitute.
    pub fn all_unrelated(nodes: Vec<String>) -> Self {
        let k = nodes.len();
        let mut edges = BTreeMap::new();
        for i in 1..=k {
            for j in 1..=k {
                if i != j {
                    edges.insert((i, j), InterRelation::Unrelated);
                }
            }
        }
        Self { nodes, edges }
    }

    pub fn from_edges(
        nodes: Vec<String>,
        edges: BTreeMap<(usize, usize), InterRelation>,
    ) -> Self {
        Self { nodes, edges }
    }

    pub fn k(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<InterRelation> {
        self.edges.get(&(from, to)).copied()
    }

    pub fn set_edge(&mut self, from: usize, to: usize, label: InterRelation) {
        self.edges.insert((from, to), label);
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Ordered (i, j) pairs with labels, ascending lexicographic.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), InterRelation)> + '_ {
        self.edges.iter().map(|(k, v)| (*k, *v))
    }

    pub fn labeled_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter(|(_, label)| **label != InterRelation::Unrelated)
            .map(|(pair, _)| *pair)
            .collect()
    }

    /// Canonical rendering: one line per ordered pair in (i, j) order,
    /// UNRELATED pairs included.
    pub fn edge_lines(&self) -> String {
        self.edges
            .iter()
            .map(|((i, j), label)| format!("CHUNK[{i}] -> CHUNK[{j}]: {}", label.as_str()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Validation findings over a graph; stable codes for the repair loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    Coverage { expected: usize, found: usize },
    SelfEdge(usize),
    Index { found: usize, k: usize },
}

impl std::fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphViolation::Coverage { expected, found } => {
                write!(f, "COVERAGE: expected {expected} ordered pairs, found {found}")
            }
            GraphViolation::SelfEdge(i) => write!(f, "SELF_EDGE: ({i}, {i})"),
            GraphViolation::Index { found, k } => {
                write!(f, "INDEX: position {found} outside 1..={k}")
            }
        }
    }
}

/// Checks completeness (k(k-1) ordered pairs), index ranges, and the absence
/// of self edges.
pub fn validate_graph(graph: &RhetoricalGraph) -> Vec<GraphViolation> {
    let k = graph.k();
    let mut violations = Vec::new();
    for ((i, j), _) in graph.edges() {
        if i == j {
            violations.push(GraphViolation::SelfEdge(i));
        }
        for idx in [i, j] {
            if idx == 0 || idx > k {
                violations.push(GraphViolation::Index { found: idx, k });
            }
        }
    }
    let expected = k * k.saturating_sub(1);
    if graph.edge_count() != expected {
        violations.push(GraphViolation::Coverage {
            expected,
            found: graph.edge_count(),
        });
    }
    violations
}

/// Renders the listwise relation-inference prompt over the chunk list.
pub fn build_graph_prompt(
    chunks: &[Chunk],
    backend_id: &str,
    query_id: &str,
) -> Result<LlmRequest, InterError> {
    if chunks.len() < 2 {
        return Err(InterError::DegenerateInput(chunks.len()));
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let user = prompts::render(
        prompts::GRAPH,
        &[
            ("relation_definitions", prompts::GRAPH_RELATION_DEFINITIONS),
            ("chunks", &prompts::chunk_list(&texts)),
        ],
    )?;
    Ok(LlmRequest::new(backend_id, query_id, CallTag::Graph, user))
}

/// Renders the shallow discourse-marker prompt over the chunk list.
pub fn build_marker_prompt(
    chunks: &[Chunk],
    backend_id: &str,
    query_id: &str,
) -> Result<LlmRequest, InterError> {
    if chunks.len() < 2 {
        return Err(InterError::DegenerateInput(chunks.len()));
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let user = prompts::render(prompts::MARKERS, &[("chunks", &prompts::chunk_list(&texts))])?;
    Ok(LlmRequest::new(backend_id, query_id, CallTag::Markers, user))
}

static EDGE_LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*CHUNK\s*\[\s*(\d+)\s*\]\s*->\s*CHUNK\s*\[\s*(\d+)\s*\]\s*:\s*\{?\s*([A-Za-z_][A-Za-z_ ]*?)\s*\}?\s*$",
    )
    .expect("static regex")
});

fn parse_edge_lines<L>(
    raw: &str,
    k: usize,
    mut parse_label: impl FnMut(&str) -> Result<L, InterError>,
) -> Result<(BTreeMap<(usize, usize), L>, Vec<String>), InterError> {
    let mut edges: BTreeMap<(usize, usize), L> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut parsed_any = false;
    for line in raw.lines() {
        let Some(caps) = EDGE_LINE_RE.captures(line) else {
            continue;
        };
        let i: usize = caps[1].parse().unwrap_or(0);
        let j: usize = caps[2].parse().unwrap_or(0);
        for idx in [i, j] {
            if idx == 0 || idx > k {
                return Err(InterError::IndexOutOfRange { found: idx, k });
            }
        }
        if i == j {
            return Err(InterError::SelfEdge(i));
        }
        let label = parse_label(&caps[3])?;
        if edges.insert((i, j), label).is_some() {
            warnings.push(format!("duplicate pair ({i}, {j}): last occurrence wins"));
        }
        parsed_any = true;
    }
    if !parsed_any {
        return Err(InterError::NoParsableLines);
    }
    Ok((edges, warnings))
}

/// Parses `CHUNK[i] -> CHUNK[j]: LABEL` lines into a complete graph over
/// `nodes`. Missing pairs are filled with UNRELATED; duplicates keep the last
/// occurrence. Both fills are reported as warnings.
pub fn parse_graph_output(
    raw: &str,
    nodes: &[String],
) -> Result<(RhetoricalGraph, Vec<String>), InterError> {
    let k = nodes.len();
    if k < 2 {
        return Err(InterError::DegenerateInput(k));
    }
    let (mut edges, mut warnings) = parse_edge_lines(raw, k, |token| {
        InterRelation::parse(token).ok_or_else(|| InterError::UnknownLabel(token.to_string()))
    })?;
    for i in 1..=k {
        for j in 1..=k {
            if i != j && !edges.contains_key(&(i, j)) {
                warnings.push(format!("missing pair ({i}, {j}) filled with UNRELATED"));
                edges.insert((i, j), InterRelation::Unrelated);
            }
        }
    }
    Ok((RhetoricalGraph::from_edges(nodes.to_vec(), edges), warnings))
}

/// The shallow-marker label set: explicit connectives plus NONE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Marker {
    However,
    But,
    Although,
    InContrast,
    Therefore,
    Because,
    AsAResult,
    Meanwhile,
    Moreover,
    Furthermore,
    ForExample,
    ForInstance,
    InAddition,
    None,
}

impl Marker {
    pub const ALL: [Marker; 14] = [
        Marker::However,
        Marker::But,
        Marker::Although,
        Marker::InContrast,
        Marker::Therefore,
        Marker::Because,
        Marker::AsAResult,
        Marker::Meanwhile,
        Marker::Moreover,
        Marker::Furthermore,
        Marker::ForExample,
        Marker::ForInstance,
        Marker::InAddition,
        Marker::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Marker::However => "however",
            Marker::But => "but",
            Marker::Although => "although",
            Marker::InContrast => "in contrast",
            Marker::Therefore => "therefore",
            Marker::Because => "because",
            Marker::AsAResult => "as a result",
            Marker::Meanwhile => "meanwhile",
            Marker::Moreover => "moreover",
            Marker::Furthermore => "furthermore",
            Marker::ForExample => "for example",
            Marker::ForInstance => "for instance",
            Marker::InAddition => "in addition",
            Marker::None => "NONE",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        let folded = token.trim().to_lowercase();
        let folded = folded.split_whitespace().collect::<Vec<_>>().join(" ");
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().to_lowercase() == folded)
    }
}

/// Marker analogue of [`RhetoricalGraph`]; same completeness rules with NONE
/// as the fill label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerGraph {
    nodes: Vec<String>,
    edges: BTreeMap<(usize, usize), Marker>,
}

impl MarkerGraph {
    pub fn all_none(nodes: Vec<String>) -> Self {
        let k = nodes.len();
        let mut edges = BTreeMap::new();
        for i in 1..=k {
            for j in 1..=k {
                if i != j {
                    edges.insert((i, j), Marker::None);
                }
            }
        }
        Self { nodes, edges }
    }

    pub fn k(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<Marker> {
        self.edges.get(&(from, to)).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_complete(&self) -> bool {
        self.edge_count() == self.k() * self.k().saturating_sub(1)
    }

    pub fn edge_lines(&self) -> String {
        self.edges
            .iter()
            .map(|((i, j), m)| format!("CHUNK[{i}] -> CHUNK[{j}]: {}", m.as_str()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parses marker lines with the same grammar as relations; missing pairs
/// become NONE.
pub fn parse_marker_output(
    raw: &str,
    nodes: &[String],
) -> Result<(MarkerGraph, Vec<String>), InterError> {
    let k = nodes.len();
    if k < 2 {
        return Err(InterError::DegenerateInput(k));
    }
    let (mut edges, warnings) = parse_edge_lines(raw, k, |token| {
        Marker::parse(token).ok_or_else(|| InterError::UnknownMarker(token.to_string()))
    })?;
    for i in 1..=k {
        for j in 1..=k {
            if i != j {
                edges.entry((i, j)).or_insert(Marker::None);
            }
        }
    }
    Ok((
        MarkerGraph {
            nodes: nodes.to_vec(),
            edges,
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunks(n: usize) -> Vec<Chunk> {
        (0..n)
            .map(|i| Chunk {
                chunk_id: format!("c{i}"),
                doc_id: "d".into(),
                ordinal: i,
                token_span: (0, 1),
                text: format!("chunk text {i}"),
            })
            .collect()
    }

    fn nodes(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn graph_prompt_lists_chunks_and_labels() {
        let req = build_graph_prompt(&chunks(3), "mock", "q").unwrap();
        assert!(req.user_prompt.contains("CHUNK[3]: chunk text 2"));
        for label in InterRelation::ALL {
            assert!(req.user_prompt.contains(label.as_str()), "missing {label}");
        }
        assert_eq!(req.tag, CallTag::Graph);

        assert!(matches!(
            build_graph_prompt(&chunks(1), "mock", "q"),
            Err(InterError::DegenerateInput(1))
        ));

        let ten = build_graph_prompt(&chunks(10), "mock", "q").unwrap();
        for i in 1..=10 {
            assert!(ten.user_prompt.contains(&format!("CHUNK[{i}]:")));
        }
    }

    #[test]
    fn parses_complete_three_chunk_output() {
        let raw = "CHUNK[1] -> CHUNK[2]: {SUPPORTS}\nCHUNK[1] -> CHUNK[3]: UNRELATED\nchatter line\nCHUNK[2] -> CHUNK[1]: elaborates\nCHUNK[2] -> CHUNK[3]: {CAUSES}\nCHUNK[3] -> CHUNK[1]: {UNRELATED}\nCHUNK[3] -> CHUNK[2]: {RESULTS_FROM}";
        let (graph, warnings) = parse_graph_output(raw, &nodes(3)).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(graph.edge_count(), 6);
        assert_eq!(graph.edge(1, 2), Some(InterRelation::Supports));
        assert_eq!(graph.edge(2, 1), Some(InterRelation::Elaborates));
        assert!(validate_graph(&graph).is_empty());
    }

    #[test]
    fn missing_pairs_fill_with_unrelated() {
        let raw = "CHUNK[1] -> CHUNK[2]: {SUPPORTS}\nCHUNK[1] -> CHUNK[3]: {CAUSES}\nCHUNK[2] -> CHUNK[1]: {SUPPORTS}\nCHUNK[2] -> CHUNK[3]: {SUPPORTS}\nCHUNK[3] -> CHUNK[1]: {SUPPORTS}";
        let (graph, warnings) = parse_graph_output(raw, &nodes(3)).unwrap();
        assert_eq!(graph.edge_count(), 6);
        assert_eq!(graph.edge(3, 2), Some(InterRelation::Unrelated));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("(3, 2)"));
    }

    #[test]
    fn index_and_label_errors() {
        assert!(matches!(
            parse_graph_output("CHUNK[4] -> CHUNK[1]: SUPPORTS", &nodes(3)),
            Err(InterError::IndexOutOfRange { found: 4, k: 3 })
        ));
        assert!(matches!(
            parse_graph_output("CHUNK[1] -> CHUNK[2]: {NOT_A_LABEL}", &nodes(3)),
            Err(InterError::UnknownLabel(tok)) if tok == "NOT_A_LABEL"
        ));
        assert!(matches!(
            parse_graph_output("CHUNK[2] -> CHUNK[2]: SUPPORTS", &nodes(3)),
            Err(InterError::SelfEdge(2))
        ));
        assert!(matches!(
            parse_graph_output("total nonsense", &nodes(3)),
            Err(InterError::NoParsableLines)
        ));
    }

    #[test]
    fn duplicate_pairs_keep_last() {
        let raw = "CHUNK[1] -> CHUNK[2]: {SUPPORTS}\nCHUNK[1] -> CHUNK[2]: {CAUSES}";
        let (graph, warnings) = parse_graph_output(raw, &nodes(2)).unwrap();
        assert_eq!(graph.edge(1, 2), Some(InterRelation::Causes));
        assert!(warnings.iter().any(|w| w.contains("duplicate pair (1, 2)")));
    }

    #[test]
    fn validate_flags_coverage_and_self_edges() {
        let complete = RhetoricalGraph::all_unrelated(nodes(3));
        assert!(validate_graph(&complete).is_empty());

        let mut edges = BTreeMap::new();
        edges.insert((2, 2), InterRelation::Supports);
        let bad = RhetoricalGraph::from_edges(nodes(3), edges);
        let violations = validate_graph(&bad);
        assert!(violations.iter().any(|v| matches!(v, GraphViolation::SelfEdge(2))));
        assert!(violations
            .iter()
            .any(|v| matches!(v, GraphViolation::Coverage { expected: 6, .. })));
    }

    #[test]
    fn canonical_lines_round_trip() {
        let mut graph = RhetoricalGraph::all_unrelated(nodes(4));
        graph.set_edge(1, 3, InterRelation::Contradicts);
        graph.set_edge(4, 2, InterRelation::BackgroundFor);
        let text = graph.edge_lines();
        let (parsed, warnings) = parse_graph_output(&text, &nodes(4)).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(parsed, graph);
    }

    #[test]
    fn marker_parsing() {
        let raw = "CHUNK[1] -> CHUNK[2]: however\nCHUNK[2] -> CHUNK[1]: {as a result}";
        let (graph, _) = parse_marker_output(raw, &nodes(2)).unwrap();
        assert_eq!(graph.edge(1, 2), Some(Marker::However));
        assert_eq!(graph.edge(2, 1), Some(Marker::AsAResult));
        assert!(graph.is_complete());

        let all_none = MarkerGraph::all_none(nodes(3));
        assert!(all_none.is_complete());
        assert_eq!(all_none.edge_count(), 6);

        assert!(matches!(
            parse_marker_output("CHUNK[1] -> CHUNK[2]: hence", &nodes(2)),
            Err(InterError::UnknownMarker(tok)) if tok == "hence"
        ));
    }

    #[test]
    fn marker_prompt_contains_marker_list() {
        let req = build_marker_prompt(&chunks(2), "mock", "q").unwrap();
        assert!(req.user_prompt.contains("however"));
        assert!(req.user_prompt.contains("in addition"));
        assert_eq!(req.tag, CallTag::Markers);
    }
}
