//! Discourse-driven planning: the blueprint prompt over (query, chunks,
//! trees, graph), plan extraction, and the sentence-level step list that the
//! perturbation study manipulates.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::discourse::inter::RhetoricalGraph;
use crate::discourse::intra::{serialize_tree, IntraError, RstTree};
use crate::llm::{CallTag, LlmRequest};
use crate::prompts;
use crate::text::split_sentences;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("expected {chunks} trees aligned with chunks, got {trees}")]
    TreeAlignment { chunks: usize, trees: usize },
    #[error("graph covers {graph_nodes} nodes but {chunks} chunks were given")]
    GraphAlignment { graph_nodes: usize, chunks: usize },
    #[error("no PLAN: marker in output")]
    MissingMarker,
    #[error("plan body is empty")]
    EmptyPlan,
    #[error(transparent)]
    Tree(#[from] IntraError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanProvenance {
    pub query_id: String,
    pub backend_id: String,
    pub attempt: u32,
}

/// The discourse-aware plan: one paragraph plus its derived step list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blueprint {
    pub text: String,
    pub steps: Vec<String>,
    pub provenance: PlanProvenance,
}

impl Blueprint {
    pub fn from_text(text: String, provenance: PlanProvenance) -> Self {
        let steps = split_steps(&text);
        Self {
            text,
            steps,
            provenance,
        }
    }

    /// Rebuilds a blueprint from an edited step list (the perturbation path).
    pub fn from_steps(steps: Vec<String>, provenance: PlanProvenance) -> Self {
        Self {
            text: steps.join(" "),
            steps,
            provenance,
        }
    }
}

/// Renders the planning prompt with the four inputs: chunks verbatim, trees
/// in canonical serialization, and the graph as canonical edge lines.
pub fn build_plan_prompt(
    query: &str,
    chunks: &[Chunk],
    trees: &[RstTree],
    graph: &RhetoricalGraph,
    backend_id: &str,
    query_id: &str,
) -> Result<LlmRequest, PlanError> {
    if trees.len() != chunks.len() {
        return Err(PlanError::TreeAlignment {
            chunks: chunks.len(),
            trees: trees.len(),
        });
    }
    if graph.k() != chunks.len() {
        return Err(PlanError::GraphAlignment {
            graph_nodes: graph.k(),
            chunks: chunks.len(),
        });
    }
    let inputs = render_plan_inputs(query, chunks, trees, graph)?;
    let user = prompts::render(prompts::PLAN, &[("inputs", &inputs)])?;
    let req = LlmRequest::new(backend_id, query_id, CallTag::Plan, user);
    Ok(req.with_max_output_tokens(512))
}

pub(crate) fn render_plan_inputs(
    query: &str,
    chunks: &[Chunk],
    trees: &[RstTree],
    graph: &RhetoricalGraph,
) -> Result<String, PlanError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let mut sections = format!("QUERY: {query}\n\nCHUNKS:\n{}", prompts::chunk_list(&texts));
    sections.push_str("\n\nRST TREES:");
    for (i, tree) in trees.iter().enumerate() {
        sections.push_str(&format!("\nTREE FOR CHUNK[{}]:\n{}", i + 1, serialize_tree(tree)?));
    }
    sections.push_str(&format!("\nRHETORICAL GRAPH:\n{}", graph.edge_lines()));
    Ok(sections)
}

static PLAN_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bPLAN\s*:").expect("static regex"));

/// Extracts the paragraph after the first `PLAN:` marker (case-insensitive,
/// whitespace-tolerant).
pub fn parse_plan(raw: &str) -> Result<String, PlanError> {
    let m = PLAN_MARKER_RE.find(raw).ok_or(PlanError::MissingMarker)?;
    let body = raw[m.end()..].trim();
    if body.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    Ok(body.to_string())
}

/// Sentence-level steps of a plan paragraph. Splits on `.`, `!`, `?`
/// followed by whitespace or end of input; single-sentence text yields one
/// step.
pub fn split_steps(text: &str) -> Vec<String> {
    split_sentences(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discourse::intra::right_branching_tree;

    fn chunk(i: usize) -> Chunk {
        Chunk {
            chunk_id: format!("c{i}"),
            doc_id: "d".into(),
            ordinal: i,
            token_span: (0, 1),
            text: format!("Fact number {i}. Detail about fact {i}."),
        }
    }

    fn provenance() -> PlanProvenance {
        PlanProvenance {
            query_id: "q".into(),
            backend_id: "mock".into(),
            attempt: 1,
        }
    }

    #[test]
    fn parse_plan_extracts_body() {
        assert_eq!(
            parse_plan("PLAN: First compare claims, then reconcile.").unwrap(),
            "First compare claims, then reconcile."
        );
        assert_eq!(parse_plan("noise\nplan:  X.").unwrap(), "X.");
        assert!(matches!(parse_plan("no marker"), Err(PlanError::MissingMarker)));
        assert!(matches!(parse_plan("PLAN:   "), Err(PlanError::EmptyPlan)));
    }

    #[test]
    fn split_steps_examples() {
        assert_eq!(split_steps("A. B. C."), vec!["A.", "B.", "C."]);
        assert_eq!(split_steps("Only one step"), vec!["Only one step"]);
        assert_eq!(split_steps("X? Y!"), vec!["X?", "Y!"]);
    }

    #[test]
    fn steps_rejoin_up_to_whitespace() {
        let text = "First do this.  Then   do that. Finally conclude.";
        let steps = split_steps(text);
        let rejoined = steps.join(" ");
        let normalize =
            |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(normalize(&rejoined), normalize(text));
    }

    #[test]
    fn blueprint_from_text_derives_steps() {
        let bp = Blueprint::from_text("One. Two. Three.".to_string(), provenance());
        assert_eq!(bp.steps.len(), 3);
        let rebuilt = Blueprint::from_steps(bp.steps.clone(), provenance());
        assert_eq!(rebuilt.text, "One. Two. Three.");
    }

    #[test]
    fn plan_prompt_renders_all_sections() {
        let chunks: Vec<Chunk> = (0..3).map(chunk).collect();
        let trees: Vec<RstTree> = chunks
            .iter()
            .map(|c| right_branching_tree(&c.chunk_id, &c.text).unwrap())
            .collect();
        let graph = RhetoricalGraph::all_unrelated(
            chunks.iter().map(|c| c.chunk_id.clone()).collect(),
        );
        let req =
            build_plan_prompt("what happened?", &chunks, &trees, &graph, "mock", "q1").unwrap();
        assert!(req.user_prompt.contains("PLAN:"));
        assert!(req.user_prompt.contains("QUERY: what happened?"));
        assert!(req.user_prompt.contains("TREE FOR CHUNK[3]:"));
        assert!(req.user_prompt.contains("RHETORICAL GRAPH:"));
        assert!(req.user_prompt.contains("CHUNK[1] -> CHUNK[2]: UNRELATED"));
        assert_eq!(req.tag, CallTag::Plan);
        assert_eq!(req.decode.max_output_tokens, 512);

        // Misaligned trees.
        let err = build_plan_prompt("q", &chunks, &trees[..2], &graph, "mock", "q1");
        assert!(matches!(err, Err(PlanError::TreeAlignment { chunks: 3, trees: 2 })));
    }

    #[test]
    fn parse_render_identity_on_plan_text() {
        let body = "Organize by contrast, then elaborate.";
        let rendered = format!("PLAN: {body}");
        assert_eq!(parse_plan(&rendered).unwrap(), body);
    }
}
