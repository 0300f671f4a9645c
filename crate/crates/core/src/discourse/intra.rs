//! Intra-chunk RST trees: prompt assembly, strict parsing of the output
//! grammar, validation, the right-branching fallback, canonical
//! serialization, and the offline tree cache.
//!
//! # Output grammar
//!
//! ```text
//! EDUs:
//! [1] <text>
//! [2] <text>
//! RST ANALYSIS:
//! RELATION(EDU_2, EDU_1): {ELABORATION}
//! TREE STRUCTURE:
//! ROOT[1-2]
//! |--- NUCLEUS[1] <text> (N)
//! |--- SATELLITE[2] <text> (S): {ELABORATION}
//! ```
//!
//! Nesting depth in the tree block is the count of leading `|` characters
//! before the dashes; the serializer emits `||--- ...` for depth two and the
//! parser tolerates spaces between pipes. The EDUs block is authoritative for
//! EDU text; leaf text inside the tree block is display only. The RST
//! ANALYSIS block is stored as-is for audit and never drives the tree.
//! Multinuclear pairs attach the relation label to the second nucleus line,
//! defaulting to SEQUENCE when absent.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::llm::{run_with_retry, CallTag, LlmClient, LlmError, LlmRequest};
use crate::prompts;
use crate::text::split_sentences;

/// The closed set of intra-chunk rhetorical relation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntraRelation {
    Elaboration,
    Explanation,
    Evidence,
    Example,
    Contrast,
    Comparison,
    Concession,
    Antithesis,
    Cause,
    Result,
    Consequence,
    Purpose,
    Condition,
    Temporal,
    Sequence,
    Background,
    Circumstance,
    Summary,
    Restatement,
    Evaluation,
    Interpretation,
    Attribution,
    Definition,
    Classification,
}

impl IntraRelation {
    pub const ALL: [IntraRelation; 24] = [
        IntraRelation::Elaboration,
        IntraRelation::Explanation,
        IntraRelation::Evidence,
        IntraRelation::Example,
        IntraRelation::Contrast,
        IntraRelation::Comparison,
        IntraRelation::Concession,
        IntraRelation::Antithesis,
        IntraRelation::Cause,
        IntraRelation::Result,
        IntraRelation::Consequence,
        IntraRelation::Purpose,
        IntraRelation::Condition,
        IntraRelation::Temporal,
        IntraRelation::Sequence,
        IntraRelation::Background,
        IntraRelation::Circumstance,
        IntraRelation::Summary,
        IntraRelation::Restatement,
        IntraRelation::Evaluation,
        IntraRelation::Interpretation,
        IntraRelation::Attribution,
        IntraRelation::Definition,
        IntraRelation::Classification,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            IntraRelation::Elaboration => "ELABORATION",
            IntraRelation::Explanation => "EXPLANATION",
            IntraRelation::Evidence => "EVIDENCE",
            IntraRelation::Example => "EXAMPLE",
            IntraRelation::Contrast => "CONTRAST",
            IntraRelation::Comparison => "COMPARISON",
            IntraRelation::Concession => "CONCESSION",
            IntraRelation::Antithesis => "ANTITHESIS",
            IntraRelation::Cause => "CAUSE",
            IntraRelation::Result => "RESULT",
            IntraRelation::Consequence => "CONSEQUENCE",
            IntraRelation::Purpose => "PURPOSE",
            IntraRelation::Condition => "CONDITION",
            IntraRelation::Temporal => "TEMPORAL",
            IntraRelation::Sequence => "SEQUENCE",
            IntraRelation::Background => "BACKGROUND",
            IntraRelation::Circumstance => "CIRCUMSTANCE",
            IntraRelation::Summary => "SUMMARY",
            IntraRelation::Restatement => "RESTATEMENT",
            IntraRelation::Evaluation => "EVALUATION",
            IntraRelation::Interpretation => "INTERPRETATION",
            IntraRelation::Attribution => "ATTRIBUTION",
            IntraRelation::Definition => "DEFINITION",
            IntraRelation::Classification => "CLASSIFICATION",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        let upper = token.trim().to_uppercase();
        Self::ALL.iter().copied().find(|r| r.as_str() == upper)
    }
}

impl std::fmt::Display for IntraRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Nucleus,
    Satellite,
}

impl Role {
    fn marker(&self) -> &'static str {
        match self {
            Role::Nucleus => "N",
            Role::Satellite => "S",
        }
    }

    fn keyword(&self) -> &'static str {
        match self {
            Role::Nucleus => "NUCLEUS",
            Role::Satellite => "SATELLITE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edu {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RstNode {
    /// Inclusive EDU index range `[lo, hi]`, 1-based.
    pub span: (usize, usize),
    pub role: Role,
    pub relation: Option<IntraRelation>,
    /// Empty for leaves; exactly two children for internal nodes.
    pub children: Vec<RstNode>,
}

impl RstNode {
    pub fn leaf(index: usize, role: Role, relation: Option<IntraRelation>) -> Self {
        Self {
            span: (index, index),
            role,
            relation,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationEdge {
    pub from: usize,
    pub to: usize,
    pub label: IntraRelation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RstTree {
    pub chunk_id: String,
    pub edus: Vec<Edu>,
    pub root: RstNode,
    /// Edges from the RST ANALYSIS block, kept for audit; the tree block is
    /// authoritative for structure.
    pub relation_edges: Vec<RelationEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationCode {
    EduIndices,
    EduEmpty,
    RootSpan,
    Arity,
    SpanPartition,
    LeafSpan,
    Index,
    RolePair,
    RelationPresence,
    LeafCoverage,
}

impl std::fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ViolationCode::EduIndices => "EDU_INDICES",
            ViolationCode::EduEmpty => "EDU_EMPTY",
            ViolationCode::RootSpan => "ROOT_SPAN",
            ViolationCode::Arity => "ARITY",
            ViolationCode::SpanPartition => "SPAN_PARTITION",
            ViolationCode::LeafSpan => "LEAF_SPAN",
            ViolationCode::Index => "INDEX",
            ViolationCode::RolePair => "ROLE_PAIR",
            ViolationCode::RelationPresence => "RELATION_PRESENCE",
            ViolationCode::LeafCoverage => "LEAF_COVERAGE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn violations_text(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum RstParseError {
    #[error("missing required block {0:?}")]
    MissingBlock(&'static str),
    #[error("blocks out of order: expected EDUs, then RST ANALYSIS, then TREE STRUCTURE")]
    BlockOrder,
    #[error("no EDU lines found in the EDUs block")]
    NoEdus,
    #[error("unknown relation label {0:?}")]
    UnknownLabel(String),
    #[error("EDU index {found} outside 1..={max}")]
    BadIndex { found: usize, max: usize },
    #[error("tree structure error: {0}")]
    Structure(String),
    #[error("tree fails validation: {}", violations_text(.0))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Error)]
pub enum IntraError {
    #[error("chunk {0:?} has empty text")]
    EmptyChunk(String),
    #[error("cannot serialize invalid tree: {}", violations_text(.0))]
    InvalidTree(Vec<Violation>),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("cache file {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache entry {key} for chunk {chunk_id:?} is corrupt: {reason}")]
    CacheCorrupt {
        key: String,
        chunk_id: String,
        reason: String,
    },
}

/// Renders the RST parsing prompt with the chunk text substituted.
pub fn build_rst_prompt(
    chunk: &Chunk,
    backend_id: &str,
    query_id: &str,
) -> Result<LlmRequest, IntraError> {
    if chunk.text.trim().is_empty() {
        return Err(IntraError::EmptyChunk(chunk.chunk_id.clone()));
    }
    let user = prompts::render(
        prompts::RST_TREE,
        &[
            ("relation_definitions", prompts::RST_RELATION_DEFINITIONS),
            ("chunk", &chunk.text),
        ],
    )?;
    Ok(LlmRequest::new(backend_id, query_id, CallTag::RstParse, user))
}

static EDU_LINE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\[(\d+)\]\s*(.*?)\s*$").expect("static regex"));
static ANALYSIS_LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*RELATION\s*\(\s*EDU[_\s]*(\d+)\s*,\s*EDU[_\s]*(\d+)\s*\)\s*:\s*\{?\s*([A-Za-z_]+)\s*\}?\s*$")
        .expect("static regex")
});
static ROOT_LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*ROOT\s*\[\s*(\d+)\s*(?:-\s*(\d+)\s*)?\]\s*$").expect("static regex")
});
static NODE_LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*((?:\|\s*)+)-{2,}\s*(NUCLEUS|SATELLITE)\s*\[\s*(\d+)\s*(?:-\s*(\d+)\s*)?\]\s*(.*?)\s*$")
        .expect("static regex")
});
static TAIL_LABEL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i):\s*\{?\s*([A-Za-z_]+)\s*\}?\s*$").expect("static regex")
});
static TAIL_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\(\s*([NS])\s*\)\s*$").expect("static regex"));

/// Parses the three-block transcript into a validated tree.
pub fn parse_rst_output(raw: &str, chunk_id: &str) -> Result<RstTree, RstParseError> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut edus_at = None;
    let mut analysis_at = None;
    let mut tree_at = None;
    for (i, line) in lines.iter().enumerate() {
        let upper = line.trim().to_uppercase();
        if upper == "EDUS:" && edus_at.is_none() {
            edus_at = Some(i);
        } else if upper == "RST ANALYSIS:" && analysis_at.is_none() {
            analysis_at = Some(i);
        } else if upper == "TREE STRUCTURE:" && tree_at.is_none() {
            tree_at = Some(i);
        }
    }
    let edus_at = edus_at.ok_or(RstParseError::MissingBlock("EDUs"))?;
    let analysis_at = analysis_at.ok_or(RstParseError::MissingBlock("RST ANALYSIS"))?;
    let tree_at = tree_at.ok_or(RstParseError::MissingBlock("TREE STRUCTURE"))?;
    if !(edus_at < analysis_at && analysis_at < tree_at) {
        return Err(RstParseError::BlockOrder);
    }

    let mut edus = Vec::new();
    for line in &lines[edus_at + 1..analysis_at] {
        if let Some(caps) = EDU_LINE_RE.captures(line) {
            let index: usize = caps[1].parse().map_err(|_| RstParseError::Structure(
                format!("unreadable EDU index in line {line:?}"),
            ))?;
            edus.push(Edu {
                index,
                text: caps[2].to_string(),
            });
        }
    }
    if edus.is_empty() {
        return Err(RstParseError::NoEdus);
    }
    let m = edus.len();

    let mut relation_edges = Vec::new();
    for line in &lines[analysis_at + 1..tree_at] {
        if let Some(caps) = ANALYSIS_LINE_RE.captures(line) {
            let from: usize = caps[1].parse().unwrap_or(0);
            let to: usize = caps[2].parse().unwrap_or(0);
            for idx in [from, to] {
                if idx == 0 || idx > m {
                    return Err(RstParseError::BadIndex { found: idx, max: m });
                }
            }
            let label = IntraRelation::parse(&caps[3])
                .ok_or_else(|| RstParseError::UnknownLabel(caps[3].to_string()))?;
            relation_edges.push(RelationEdge { from, to, label });
        }
    }

    let root = parse_tree_block(&lines[tree_at + 1..], m)?;
    let tree = RstTree {
        chunk_id: chunk_id.to_string(),
        edus,
        root,
        relation_edges,
    };
    let violations = validate_tree(&tree);
    if violations.is_empty() {
        Ok(tree)
    } else {
        Err(RstParseError::Invalid(violations))
    }
}

/// Splits a node line tail into (text, marker, label token).
fn split_tail(rest: &str) -> (String, Option<String>) {
    let mut s = rest.trim().to_string();
    let mut label = None;
    if let Some(caps) = TAIL_LABEL_RE.captures(&s) {
        label = Some(caps[1].to_string());
        let start = caps.get(0).expect("match").start();
        s.truncate(start);
        s = s.trim_end().to_string();
    }
    if let Some(caps) = TAIL_MARKER_RE.captures(&s) {
        let start = caps.get(0).expect("match").start();
        s.truncate(start);
        s = s.trim_end().to_string();
    }
    (s, label)
}

fn parse_tree_block(lines: &[&str], m: usize) -> Result<RstNode, RstParseError> {
    let mut content = lines.iter().filter(|l| !l.trim().is_empty());
    let root_line = content
        .next()
        .ok_or(RstParseError::Structure("tree block is empty".to_string()))?;
    let caps = ROOT_LINE_RE
        .captures(root_line)
        .ok_or_else(|| RstParseError::Structure(format!("expected ROOT[lo-hi], found {root_line:?}")))?;
    let lo: usize = caps[1].parse().unwrap_or(0);
    let hi: usize = caps.get(2).map_or(lo, |c| c.as_str().parse().unwrap_or(0));
    check_span(lo, hi, m)?;
    let root = RstNode {
        span: (lo, hi),
        role: Role::Nucleus,
        relation: None,
        children: Vec::new(),
    };

    // Stack of (depth, node); children attach to the nearest shallower node.
    let mut stack: Vec<(usize, RstNode)> = vec![(0, root)];
    for line in content {
        let caps = NODE_LINE_RE
            .captures(line)
            .ok_or_else(|| RstParseError::Structure(format!("unparseable tree line {line:?}")))?;
        let depth = caps[1].chars().filter(|c| *c == '|').count();
        let role = if caps[2].to_uppercase().starts_with('N') {
            Role::Nucleus
        } else {
            Role::Satellite
        };
        let lo: usize = caps[3].parse().unwrap_or(0);
        let hi: usize = caps.get(4).map_or(lo, |c| c.as_str().parse().unwrap_or(0));
        check_span(lo, hi, m)?;
        let (_text, label_token) = split_tail(&caps[5]);
        let relation = match label_token {
            Some(token) => Some(
                IntraRelation::parse(&token).ok_or(RstParseError::UnknownLabel(token))?,
            ),
            None => None,
        };
        while stack.last().map_or(false, |(d, _)| *d >= depth) {
            let (_, done) = stack.pop().expect("non-empty stack");
            stack
                .last_mut()
                .ok_or_else(|| {
                    RstParseError::Structure(format!("node at depth {depth} has no parent"))
                })?
                .1
                .children
                .push(done);
        }
        match stack.last() {
            Some((d, _)) if *d + 1 == depth => {}
            _ => {
                return Err(RstParseError::Structure(format!(
                    "nesting jump at line {line:?} (depth {depth})"
                )))
            }
        }
        stack.push((
            depth,
            RstNode {
                span: (lo, hi),
                role,
                relation,
                children: Vec::new(),
            },
        ));
    }
    while stack.len() > 1 {
        let (_, done) = stack.pop().expect("non-empty stack");
        stack.last_mut().expect("root remains").1.children.push(done);
    }
    let mut root = stack.pop().expect("root").1;
    fill_multinuclear_defaults(&mut root);
    Ok(root)
}

fn check_span(lo: usize, hi: usize, m: usize) -> Result<(), RstParseError> {
    for idx in [lo, hi] {
        if idx == 0 || idx > m {
            return Err(RstParseError::BadIndex { found: idx, max: m });
        }
    }
    if lo > hi {
        return Err(RstParseError::Structure(format!("inverted span [{lo}-{hi}]")));
    }
    Ok(())
}

/// A multinuclear pair without an explicit label gets SEQUENCE on the second
/// nucleus.
fn fill_multinuclear_defaults(node: &mut RstNode) {
    if node.children.len() == 2 {
        let roles = (node.children[0].role, node.children[1].role);
        if roles == (Role::Nucleus, Role::Nucleus) && node.children[1].relation.is_none() {
            node.children[1].relation = Some(IntraRelation::Sequence);
        }
    }
    for child in &mut node.children {
        fill_multinuclear_defaults(child);
    }
}

/// Checks every tree invariant; returns all violations with stable codes.
pub fn validate_tree(tree: &RstTree) -> Vec<Violation> {
    let mut violations = Vec::new();
    let m = tree.edus.len();
    for (i, edu) in tree.edus.iter().enumerate() {
        if edu.index != i + 1 {
            violations.push(Violation {
                code: ViolationCode::EduIndices,
                message: format!("EDU at position {} has index {}", i + 1, edu.index),
            });
        }
        if edu.text.trim().is_empty() {
            violations.push(Violation {
                code: ViolationCode::EduEmpty,
                message: format!("EDU {} has empty text", edu.index),
            });
        }
    }
    if m == 0 {
        violations.push(Violation {
            code: ViolationCode::EduIndices,
            message: "tree has no EDUs".to_string(),
        });
        return violations;
    }
    if tree.root.span != (1, m) {
        violations.push(Violation {
            code: ViolationCode::RootSpan,
            message: format!("root span {:?} but EDUs cover [1, {m}]", tree.root.span),
        });
    }
    if tree.root.relation.is_some() {
        violations.push(Violation {
            code: ViolationCode::RelationPresence,
            message: "root carries a relation label".to_string(),
        });
    }
    for edge in &tree.relation_edges {
        for idx in [edge.from, edge.to] {
            if idx == 0 || idx > m {
                violations.push(Violation {
                    code: ViolationCode::Index,
                    message: format!("analysis edge references EDU {idx} outside 1..={m}"),
                });
            }
        }
    }
    let mut leaf_indices = Vec::new();
    walk(&tree.root, m, &mut violations, &mut leaf_indices);
    leaf_indices.sort_unstable();
    let expected: Vec<usize> = (1..=m).collect();
    if leaf_indices != expected {
        violations.push(Violation {
            code: ViolationCode::LeafCoverage,
            message: format!("leaves cover {leaf_indices:?}, expected every index in [1, {m}] exactly once"),
        });
    }
    violations
}

fn walk(node: &RstNode, m: usize, violations: &mut Vec<Violation>, leaves: &mut Vec<usize>) {
    let (lo, hi) = node.span;
    if lo == 0 || hi > m || lo > hi {
        violations.push(Violation {
            code: ViolationCode::Index,
            message: format!("span [{lo}-{hi}] outside 1..={m}"),
        });
    }
    if node.is_leaf() {
        if lo != hi {
            violations.push(Violation {
                code: ViolationCode::LeafSpan,
                message: format!("leaf spans [{lo}-{hi}], expected a single EDU"),
            });
        }
        leaves.push(lo);
        return;
    }
    if node.children.len() != 2 {
        violations.push(Violation {
            code: ViolationCode::Arity,
            message: format!(
                "internal node [{lo}-{hi}] has {} children, expected 2",
                node.children.len()
            ),
        });
        for child in &node.children {
            walk(child, m, violations, leaves);
        }
        return;
    }
    let (left, right) = (&node.children[0], &node.children[1]);
    if left.span.0 != lo || right.span.1 != hi || left.span.1 + 1 != right.span.0 {
        violations.push(Violation {
            code: ViolationCode::SpanPartition,
            message: format!(
                "children [{}-{}] and [{}-{}] do not partition [{lo}-{hi}]",
                left.span.0, left.span.1, right.span.0, right.span.1
            ),
        });
    }
    let roles = (left.role, right.role);
    if roles == (Role::Satellite, Role::Satellite) {
        violations.push(Violation {
            code: ViolationCode::RolePair,
            message: format!("node [{lo}-{hi}] has two satellite children"),
        });
    }
    // Exactly the satellite (or the second of two nuclei) carries the label.
    let expect_relation = |child: &RstNode, expected: bool, what: &str| {
        if child.relation.is_some() != expected {
            Some(Violation {
                code: ViolationCode::RelationPresence,
                message: format!(
                    "{} child [{}-{}] of [{lo}-{hi}] {} a relation label",
                    what,
                    child.span.0,
                    child.span.1,
                    if expected { "is missing" } else { "unexpectedly carries" }
                ),
            })
        } else {
            None
        }
    };
    let checks = match roles {
        (Role::Nucleus, Role::Satellite) => [
            expect_relation(left, false, "nucleus"),
            expect_relation(right, true, "satellite"),
        ],
        (Role::Satellite, Role::Nucleus) => [
            expect_relation(left, true, "satellite"),
            expect_relation(right, false, "nucleus"),
        ],
        (Role::Nucleus, Role::Nucleus) => [
            expect_relation(left, false, "first nucleus"),
            expect_relation(right, true, "second nucleus"),
        ],
        _ => [None, None],
    };
    violations.extend(checks.into_iter().flatten());
    walk(left, m, violations, leaves);
    walk(right, m, violations, leaves);
}

/// Builds a right-branching chain over sentence-level EDUs: the first EDU is
/// the nucleus at every level and every later EDU attaches as an ELABORATION
/// satellite.
pub fn right_branching_tree(chunk_id: &str, chunk_text: &str) -> Result<RstTree, IntraError> {
    let sentences = split_sentences(chunk_text);
    if sentences.is_empty() {
        return Err(IntraError::EmptyChunk(chunk_id.to_string()));
    }
    let m = sentences.len();
    let edus: Vec<Edu> = sentences
        .into_iter()
        .enumerate()
        .map(|(i, text)| Edu { index: i + 1, text })
        .collect();

    fn build(lo: usize, hi: usize, role: Role, relation: Option<IntraRelation>) -> RstNode {
        if lo == hi {
            return RstNode::leaf(lo, role, relation);
        }
        RstNode {
            span: (lo, hi),
            role,
            relation,
            children: vec![
                RstNode::leaf(lo, Role::Nucleus, None),
                build(lo + 1, hi, Role::Satellite, Some(IntraRelation::Elaboration)),
            ],
        }
    }

    let root = build(1, m, Role::Nucleus, None);
    let relation_edges = (2..=m)
        .map(|i| RelationEdge {
            from: i,
            to: i - 1,
            label: IntraRelation::Elaboration,
        })
        .collect();
    Ok(RstTree {
        chunk_id: chunk_id.to_string(),
        edus,
        root,
        relation_edges,
    })
}

/// Recovery tree used when retries are exhausted. Always validates.
pub fn fallback_tree(chunk: &Chunk) -> Result<RstTree, IntraError> {
    right_branching_tree(&chunk.chunk_id, &chunk.text)
}

/// Canonical three-block rendering; `parse_rst_output(serialize_tree(t))`
/// reproduces `t` structurally.
pub fn serialize_tree(tree: &RstTree) -> Result<String, IntraError> {
    let violations = validate_tree(tree);
    if !violations.is_empty() {
        return Err(IntraError::InvalidTree(violations));
    }
    let mut out = String::new();
    out.push_str("EDUs:\n");
    for edu in &tree.edus {
        out.push_str(&format!("[{}] {}\n", edu.index, edu.text));
    }
    out.push_str("RST ANALYSIS:\n");
    for edge in &tree.relation_edges {
        out.push_str(&format!(
            "RELATION(EDU_{}, EDU_{}): {{{}}}\n",
            edge.from,
            edge.to,
            edge.label.as_str()
        ));
    }
    out.push_str("TREE STRUCTURE:\n");
    out.push_str(&format!("ROOT[{}-{}]\n", tree.root.span.0, tree.root.span.1));
    for child in &tree.root.children {
        render_node(child, 1, &tree.edus, &mut out);
    }
    Ok(out)
}

fn render_node(node: &RstNode, depth: usize, edus: &[Edu], out: &mut String) {
    let pipes: String = "|".repeat(depth);
    let span = if node.span.0 == node.span.1 {
        format!("[{}]", node.span.0)
    } else {
        format!("[{}-{}]", node.span.0, node.span.1)
    };
    let text = if node.is_leaf() {
        format!(" {}", edus[node.span.0 - 1].text)
    } else {
        String::new()
    };
    let label = node
        .relation
        .map(|r| format!(": {{{}}}", r.as_str()))
        .unwrap_or_default();
    out.push_str(&format!(
        "{pipes}--- {}{span}{text} ({}){label}\n",
        node.role.keyword(),
        node.role.marker()
    ));
    for child in &node.children {
        render_node(child, depth + 1, edus, out);
    }
}

/// Content-addressed cache key: chunk text, prompt version, and backend.
pub fn cache_key(chunk_text: &str, prompt_version: &str, backend_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(chunk_text.as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt_version.as_bytes());
    hasher.update([0x1f]);
    hasher.update(backend_id.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    prompt_version: String,
    backend_id: String,
    chunk_id: String,
    tree: String,
}

/// Append-friendly JSONL store of serialized trees, keyed by
/// [`cache_key`]. Later lines win, so overwriting an entry is an append.
pub struct TreeCache {
    path: Option<PathBuf>,
    file: Option<File>,
    prompt_version: String,
    entries: HashMap<String, CacheLine>,
}

impl TreeCache {
    /// Opens (or creates) a file-backed cache. Corrupt lines are skipped and
    /// reported as warnings; the affected chunks simply re-parse.
    pub fn open(path: &Path, prompt_version: &str) -> Result<(Self, Vec<String>), IntraError> {
        let io_err = |source| IntraError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        let mut entries = HashMap::new();
        let mut warnings = Vec::new();
        if path.exists() {
            let raw = std::fs::read_to_string(path).map_err(io_err)?;
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(line) {
                    Ok(entry) => {
                        entries.insert(entry.key.clone(), entry);
                    }
                    Err(e) => warnings.push(format!(
                        "cache line {} unreadable and skipped: {e}",
                        i + 1
                    )),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok((
            Self {
                path: Some(path.to_path_buf()),
                file: Some(file),
                prompt_version: prompt_version.to_string(),
                entries,
            },
            warnings,
        ))
    }

    /// Cache without a backing file, for tests and one-shot runs.
    pub fn in_memory(prompt_version: &str) -> Self {
        Self {
            path: None,
            file: None,
            prompt_version: prompt_version.to_string(),
            entries: HashMap::new(),
        }
    }

    pub fn prompt_version(&self) -> &str {
        &self.prompt_version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Looks up a key and re-validates the stored tree.
    pub fn lookup(&self, key: &str) -> Result<Option<RstTree>, IntraError> {
        let Some(entry) = self.entries.get(key) else {
            return Ok(None);
        };
        match parse_rst_output(&entry.tree, &entry.chunk_id) {
            Ok(tree) => Ok(Some(tree)),
            Err(e) => Err(IntraError::CacheCorrupt {
                key: key.to_string(),
                chunk_id: entry.chunk_id.clone(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn insert(
        &mut self,
        key: &str,
        chunk_id: &str,
        backend_id: &str,
        tree: &RstTree,
    ) -> Result<(), IntraError> {
        let line = CacheLine {
            key: key.to_string(),
            prompt_version: self.prompt_version.clone(),
            backend_id: backend_id.to_string(),
            chunk_id: chunk_id.to_string(),
            tree: serialize_tree(tree)?,
        };
        if let Some(file) = self.file.as_mut() {
            let path = self.path.as_ref().expect("file-backed cache has a path");
            let json = serde_json::to_string(&line).expect("cache line json");
            writeln!(file, "{json}").map_err(|source| IntraError::CacheIo {
                path: path.display().to_string(),
                source,
            })?;
            file.flush().map_err(|source| IntraError::CacheIo {
                path: path.display().to_string(),
                source,
            })?;
        }
        self.entries.insert(line.key.clone(), line);
        Ok(())
    }

    /// Corrupts-in-place hook for tests: overwrite an entry's stored text.
    #[doc(hidden)]
    pub fn poison_entry(&mut self, key: &str, text: &str) {
        if let Some(entry) = self.entries.get_mut(key) {
            entry.tree = text.to_string();
        }
    }
}

/// How a tree was obtained by [`get_or_parse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeSource {
    CacheHit,
    Parsed { attempts: u32 },
    Fallback { attempts: u32 },
}

/// Result of [`get_or_parse`]: the tree, where it came from, and any
/// non-fatal warnings (cache corruption, fallback use).
#[derive(Debug, Clone)]
pub struct TreeOutcome {
    pub tree: RstTree,
    pub source: TreeSource,
    pub warnings: Vec<String>,
}

impl TreeOutcome {
    pub fn cache_hit(&self) -> bool {
        self.source == TreeSource::CacheHit
    }
}

/// The prompt → parse → validate loop with repair retries, falling back to
/// the right-branching tree on exhaustion. No cache involved; callers that
/// cache wrap this (see [`get_or_parse`]).
pub fn parse_or_fallback(
    client: &LlmClient,
    backend_id: &str,
    query_id: &str,
    chunk: &Chunk,
    max_attempts: u32,
) -> Result<TreeOutcome, IntraError> {
    let req = build_rst_prompt(chunk, backend_id, query_id)?;
    let chunk_id = chunk.chunk_id.clone();
    let outcome = run_with_retry(client, &req, max_attempts, move |raw| {
        parse_rst_output(raw, &chunk_id).map_err(|e| e.to_string())
    });
    let mut warnings = Vec::new();
    let (tree, source) = match outcome {
        Ok(parsed) => (
            parsed.value,
            TreeSource::Parsed {
                attempts: parsed.attempts,
            },
        ),
        Err(LlmError::Exhausted {
            attempts,
            last_violation,
            ..
        }) => {
            warnings.push(format!(
                "rst parse exhausted after {attempts} attempts ({last_violation}); using fallback tree"
            ));
            (fallback_tree(chunk)?, TreeSource::Fallback { attempts })
        }
        Err(e) => return Err(IntraError::Llm(e)),
    };
    Ok(TreeOutcome {
        tree,
        source,
        warnings,
    })
}

/// Returns the cached tree when present, otherwise runs [`parse_or_fallback`]
/// and stores the result.
pub fn get_or_parse(
    client: &LlmClient,
    backend_id: &str,
    query_id: &str,
    chunk: &Chunk,
    cache: &mut TreeCache,
    max_attempts: u32,
) -> Result<TreeOutcome, IntraError> {
    let key = cache_key(&chunk.text, &cache.prompt_version, backend_id);
    let mut warnings = Vec::new();
    match cache.lookup(&key) {
        Ok(Some(tree)) => {
            return Ok(TreeOutcome {
                tree,
                source: TreeSource::CacheHit,
                warnings,
            })
        }
        Ok(None) => {}
        Err(e) => warnings.push(format!("{e}; re-parsing")),
    }
    let mut outcome = parse_or_fallback(client, backend_id, query_id, chunk, max_attempts)?;
    cache.insert(&key, &chunk.chunk_id, backend_id, &outcome.tree)?;
    warnings.append(&mut outcome.warnings);
    outcome.warnings = warnings;
    Ok(outcome)
}
