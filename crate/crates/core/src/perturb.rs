//! Seeded structural perturbation operators over trees, graphs, and plans.
//!
//! Every operator is a pure function of (input, spec): the RNG is ChaCha8
//! seeded from the spec, so a perturbation manifest replays exactly. The
//! pipeline derives a per-query seed by mixing the query id (and for trees
//! the chunk id) into `spec.seed` before calling in here.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discourse::inter::{InterRelation, RhetoricalGraph};
use crate::discourse::intra::{Edu, IntraRelation, RelationEdge, Role, RstNode, RstTree};
use crate::planning::Blueprint;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("kind {kind:?} does not target {target:?}")]
    KindTargetMismatch { target: PerturbTarget, kind: PerturbKind },
    #[error("fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("malformed perturbation spec {0:?}: expected target:kind:fraction:seed")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbTarget {
    Tree,
    Graph,
    Plan,
}

impl PerturbTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbTarget::Tree => "TREE",
            PerturbTarget::Graph => "GRAPH",
            PerturbTarget::Plan => "PLAN",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_uppercase().as_str() {
            "TREE" => Some(PerturbTarget::Tree),
            "GRAPH" => Some(PerturbTarget::Graph),
            "PLAN" => Some(PerturbTarget::Plan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbKind {
    ShuffleLabels,
    SwapNuclearity,
    DropSubtree,
    RemoveEdges,
    FlipDirection,
    ReplaceLabels,
    Omit,
    ShuffleSteps,
    RemoveSteps,
}

impl PerturbKind {
    pub fn target(&self) -> PerturbTarget {
        match self {
            PerturbKind::ShuffleLabels | PerturbKind::SwapNuclearity | PerturbKind::DropSubtree => {
                PerturbTarget::Tree
            }
            PerturbKind::RemoveEdges | PerturbKind::FlipDirection | PerturbKind::ReplaceLabels => {
                PerturbTarget::Graph
            }
            PerturbKind::Omit | PerturbKind::ShuffleSteps | PerturbKind::RemoveSteps => {
                PerturbTarget::Plan
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbKind::ShuffleLabels => "SHUFFLE_LABELS",
            PerturbKind::SwapNuclearity => "SWAP_NUCLEARITY",
            PerturbKind::DropSubtree => "DROP_SUBTREE",
            PerturbKind::RemoveEdges => "REMOVE_EDGES",
            PerturbKind::FlipDirection => "FLIP_DIRECTION",
            PerturbKind::ReplaceLabels => "REPLACE_LABELS",
            PerturbKind::Omit => "OMIT",
            PerturbKind::ShuffleSteps => "SHUFFLE_STEPS",
            PerturbKind::RemoveSteps => "REMOVE_STEPS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let folded = s.trim().to_uppercase().replace('-', "_");
        [
            PerturbKind::ShuffleLabels,
            PerturbKind::SwapNuclearity,
            PerturbKind::DropSubtree,
            PerturbKind::RemoveEdges,
            PerturbKind::FlipDirection,
            PerturbKind::ReplaceLabels,
            PerturbKind::Omit,
            PerturbKind::ShuffleSteps,
            PerturbKind::RemoveSteps,
        ]
        .into_iter()
        .find(|k| k.as_str() == folded)
    }
}

/// One perturbation to apply; serialized as-is into replayable manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub target: PerturbTarget,
    pub kind: PerturbKind,
    pub fraction: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, fraction: f64, seed: u64) -> Self {
        Self {
            target: kind.target(),
            kind,
            fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if self.kind.target() != self.target {
            return Err(PerturbError::KindTargetMismatch {
                target: self.target,
                kind: self.kind,
            });
        }
        if !(0.0..=1.0).contains(&self.fraction) || self.fraction.is_nan() {
            return Err(PerturbError::BadFraction(self.fraction));
        }
        Ok(())
    }

    /// Parses the CLI form `target:kind:fraction:seed`.
    pub fn parse_flag(flag: &str) -> Result<Self, PerturbError> {
        let parts: Vec<&str> = flag.split(':').collect();
        if parts.len() != 4 {
            return Err(PerturbError::BadSpec(flag.to_string()));
        }
        let target =
            PerturbTarget::parse(parts[0]).ok_or_else(|| PerturbError::BadSpec(flag.to_string()))?;
        let kind =
            PerturbKind::parse(parts[1]).ok_or_else(|| PerturbError::BadSpec(flag.to_string()))?;
        let fraction: f64 =
            parts[2].parse().map_err(|_| PerturbError::BadSpec(flag.to_string()))?;
        let seed: u64 = parts[3].parse().map_err(|_| PerturbError::BadSpec(flag.to_string()))?;
        let spec = Self {
            target,
            kind,
            fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The same spec with its seed mixed with a context hash; how the
    /// pipeline derives per-query (and per-chunk) seeds.
    pub fn reseeded(&self, salt: u64) -> Self {
        Self {
            seed: self.seed ^ salt,
            ..*self
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

fn ceil_frac(p: f64, n: usize) -> usize {
    ((p * n as f64).ceil() as usize).min(n)
}

/// Node paths (child index sequences) collected in preorder.
fn collect_paths(node: &RstNode, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, bool)>) {
    out.push((path.clone(), !node.is_leaf()));
    for (i, child) in node.children.iter().enumerate() {
        path.push(i);
        collect_paths(child, path, out);
        path.pop();
    }
}

fn node_at_mut<'a>(root: &'a mut RstNode, path: &[usize]) -> &'a mut RstNode {
    let mut node = root;
    for &i in path {
        node = &mut node.children[i];
    }
    node
}

fn node_at<'a>(root: &'a RstNode, path: &[usize]) -> &'a RstNode {
    let mut node = root;
    for &i in path {
        node = &node.children[i];
    }
    node
}

/// Applies one tree perturbation. The output is renumbered and always passes
/// validation; impossible requests (dropping from a single-leaf tree) no-op
/// with a warning.
pub fn perturb_tree(
    tree: &RstTree,
    spec: &PerturbSpec,
) -> Result<(RstTree, Vec<String>), PerturbError> {
    spec.validate()?;
    if spec.target != PerturbTarget::Tree {
        return Err(PerturbError::KindTargetMismatch {
            target: spec.target,
            kind: spec.kind,
        });
    }
    let mut rng = spec.rng();
    let mut out = tree.clone();
    let mut warnings = Vec::new();
    match spec.kind {
        PerturbKind::ShuffleLabels => {
            let mut paths = Vec::new();
            collect_paths(&tree.root, &mut Vec::new(), &mut paths);
            let labeled: Vec<Vec<usize>> = paths
                .iter()
                .filter(|(p, _)| node_at(&tree.root, p).relation.is_some())
                .map(|(p, _)| p.clone())
                .collect();
            let n = ceil_frac(spec.fraction, labeled.len());
            let chosen = rand::seq::index::sample(&mut rng, labeled.len(), n).into_vec();
            for idx in chosen {
                let node = node_at_mut(&mut out.root, &labeled[idx]);
                let original = node.relation.expect("labeled position");
                let alternatives: Vec<IntraRelation> = IntraRelation::ALL
                    .into_iter()
                    .filter(|r| *r != original)
                    .collect();
                node.relation = Some(*alternatives.choose(&mut rng).expect("23 alternatives"));
            }
        }
        PerturbKind::SwapNuclearity => {
            let mut paths = Vec::new();
            collect_paths(&tree.root, &mut Vec::new(), &mut paths);
            let swappable: Vec<Vec<usize>> = paths
                .iter()
                .filter(|(p, internal)| {
                    if !internal {
                        return false;
                    }
                    let node = node_at(&tree.root, p);
                    let roles = (node.children[0].role, node.children[1].role);
                    roles == (Role::Nucleus, Role::Satellite)
                        || roles == (Role::Satellite, Role::Nucleus)
                })
                .map(|(p, _)| p.clone())
                .collect();
            let n = ceil_frac(spec.fraction, swappable.len());
            let chosen = rand::seq::index::sample(&mut rng, swappable.len(), n).into_vec();
            for idx in chosen {
                let node = node_at_mut(&mut out.root, &swappable[idx]);
                let (sat_idx, nuc_idx) = if node.children[0].role == Role::Satellite {
                    (0, 1)
                } else {
                    (1, 0)
                };
                let label = node.children[sat_idx].relation.take();
                node.children[sat_idx].role = Role::Nucleus;
                node.children[nuc_idx].role = Role::Satellite;
                node.children[nuc_idx].relation = label;
            }
        }
        PerturbKind::DropSubtree => {
            let mut paths = Vec::new();
            collect_paths(&tree.root, &mut Vec::new(), &mut paths);
            let internal: Vec<Vec<usize>> =
                paths.iter().filter(|(_, i)| *i).map(|(p, _)| p.clone()).collect();
            if internal.is_empty() {
                warnings.push("single-leaf tree: DROP_SUBTREE is a no-op".to_string());
                return Ok((out, warnings));
            }
            let pick = rng.gen_range(0..internal.len());
            let path = &internal[pick];
            let target = node_at_mut(&mut out.root, path);
            let nucleus_idx = target
                .children
                .iter()
                .position(|c| c.role == Role::Nucleus)
                .unwrap_or(0);
            let mut replacement = target.children.swap_remove(nucleus_idx);
            // The surviving subtree takes over the dropped node's slot, so it
            // inherits that slot's role and relation.
            replacement.role = target.role;
            replacement.relation = target.relation;
            *target = replacement;
            renumber(&mut out);
        }
        other => {
            return Err(PerturbError::KindTargetMismatch {
                target: PerturbTarget::Tree,
                kind: other,
            })
        }
    }
    Ok((out, warnings))
}

/// Rebuilds EDU numbering after a structural splice: surviving leaves are
/// renumbered 1..m' in text order, spans recomputed bottom-up, and audit
/// edges touching removed EDUs dropped.
fn renumber(tree: &mut RstTree) {
    let mut kept = Vec::new();
    fn leaves(node: &RstNode, out: &mut Vec<usize>) {
        if node.is_leaf() {
            out.push(node.span.0);
        } else {
            for child in &node.children {
                leaves(child, out);
            }
        }
    }
    leaves(&tree.root, &mut kept);
    let remap: std::collections::HashMap<usize, usize> =
        kept.iter().enumerate().map(|(new, old)| (*old, new + 1)).collect();

    fn rewrite(node: &mut RstNode, remap: &std::collections::HashMap<usize, usize>) -> (usize, usize) {
        if node.is_leaf() {
            let idx = remap[&node.span.0];
            node.span = (idx, idx);
            return node.span;
        }
        let mut lo = usize::MAX;
        let mut hi = 0;
        for child in &mut node.children {
            let (clo, chi) = rewrite(child, remap);
            lo = lo.min(clo);
            hi = hi.max(chi);
        }
        node.span = (lo, hi);
        node.span
    }
    rewrite(&mut tree.root, &remap);

    tree.edus = kept
        .iter()
        .enumerate()
        .map(|(new, old)| Edu {
            index: new + 1,
            text: tree.edus[*old - 1].text.clone(),
        })
        .collect();
    tree.relation_edges = tree
        .relation_edges
        .iter()
        .filter_map(|e| {
            Some(RelationEdge {
                from: *remap.get(&e.from)?,
                to: *remap.get(&e.to)?,
                label: e.label,
            })
        })
        .collect();
}

/// Applies one graph perturbation over the non-UNRELATED edges. The graph
/// stays complete; an all-UNRELATED graph no-ops with a warning.
pub fn perturb_graph(
    graph: &RhetoricalGraph,
    spec: &PerturbSpec,
) -> Result<(RhetoricalGraph, Vec<String>), PerturbError> {
    spec.validate()?;
    if spec.target != PerturbTarget::Graph {
        return Err(PerturbError::KindTargetMismatch {
            target: spec.target,
            kind: spec.kind,
        });
    }
    let mut rng = spec.rng();
    let mut out = graph.clone();
    let mut warnings = Vec::new();
    let labeled = graph.labeled_edges();
    if labeled.is_empty() {
        warnings.push("all edges are UNRELATED: graph perturbation is a no-op".to_string());
        return Ok((out, warnings));
    }
    let n = ceil_frac(spec.fraction, labeled.len());
    let chosen = rand::seq::index::sample(&mut rng, labeled.len(), n).into_vec();
    match spec.kind {
        PerturbKind::RemoveEdges => {
            for idx in chosen {
                let (i, j) = labeled[idx];
                out.set_edge(i, j, InterRelation::Unrelated);
            }
        }
        PerturbKind::FlipDirection => {
            for idx in chosen {
                let (i, j) = labeled[idx];
                let forward = out.edge(i, j).expect("complete graph");
                let backward = out.edge(j, i).expect("complete graph");
                out.set_edge(i, j, backward);
                out.set_edge(j, i, forward);
            }
        }
        PerturbKind::ReplaceLabels => {
            for idx in chosen {
                let (i, j) = labeled[idx];
                let original = out.edge(i, j).expect("complete graph");
                let alternatives: Vec<InterRelation> =
                    InterRelation::labeled().filter(|r| *r != original).collect();
                out.set_edge(i, j, *alternatives.choose(&mut rng).expect("19 alternatives"));
            }
        }
        other => {
            return Err(PerturbError::KindTargetMismatch {
                target: PerturbTarget::Graph,
                kind: other,
            })
        }
    }
    Ok((out, warnings))
}

/// Applies one plan perturbation. OMIT returns `None` (the generation prompt
/// then omits its plan section); REMOVE_STEPS always retains at least one
/// step.
pub fn perturb_plan(
    plan: &Blueprint,
    spec: &PerturbSpec,
) -> Result<(Option<Blueprint>, Vec<String>), PerturbError> {
    spec.validate()?;
    if spec.target != PerturbTarget::Plan {
        return Err(PerturbError::KindTargetMismatch {
            target: spec.target,
            kind: spec.kind,
        });
    }
    let mut rng = spec.rng();
    let mut warnings = Vec::new();
    let steps = plan.steps.clone();
    let result = match spec.kind {
        PerturbKind::Omit => None,
        PerturbKind::ShuffleSteps => {
            let n = ceil_frac(spec.fraction, steps.len());
            let chosen = {
                let mut c = rand::seq::index::sample(&mut rng, steps.len(), n).into_vec();
                c.sort_unstable();
                c
            };
            let mut values: Vec<String> = chosen.iter().map(|i| steps[*i].clone()).collect();
            values.shuffle(&mut rng);
            let mut new_steps = steps.clone();
            for (slot, value) in chosen.into_iter().zip(values) {
                new_steps[slot] = value;
            }
            Some(Blueprint::from_steps(new_steps, plan.provenance.clone()))
        }
        PerturbKind::RemoveSteps => {
            if steps.len() <= 1 {
                warnings.push("single-step plan: REMOVE_STEPS is a no-op".to_string());
                return Ok((Some(plan.clone()), warnings));
            }
            let n = ceil_frac(spec.fraction, steps.len()).min(steps.len() - 1);
            let drop: std::collections::BTreeSet<usize> =
                rand::seq::index::sample(&mut rng, steps.len(), n).into_iter().collect();
            let kept: Vec<String> = steps
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, s)| s)
                .collect();
            Some(Blueprint::from_steps(kept, plan.provenance.clone()))
        }
        other => {
            return Err(PerturbError::KindTargetMismatch {
                target: PerturbTarget::Plan,
                kind: other,
            })
        }
    };
    Ok((result, warnings))
}
