//! Versioned prompt templates and the placeholder renderer.
//!
//! Templates ship with the crate as plain-text files. `{name}` is a
//! placeholder; literal braces are written `{{` and `}}`. The template
//! version participates in tree cache keys, so bumping it invalidates
//! cached parses.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

/// Bumped whenever any template text changes.
pub const PROMPT_VERSION: &str = "disco-prompts-v1";

pub const RST_TREE: &str = include_str!("../templates/rst_tree.txt");
pub const RST_RELATION_DEFINITIONS: &str = include_str!("../templates/rst_relation_definitions.txt");
pub const GRAPH: &str = include_str!("../templates/graph.txt");
pub const GRAPH_RELATION_DEFINITIONS: &str =
    include_str!("../templates/graph_relation_definitions.txt");
pub const MARKERS: &str = include_str!("../templates/markers.txt");
pub const PLAN: &str = include_str!("../templates/plan.txt");
pub const GENERATE_DISCO: &str = include_str!("../templates/generate_disco.txt");
pub const FULL_CONTEXT: &str = include_str!("../templates/full_context.txt");
pub const STANDARD_RAG: &str = include_str!("../templates/standard_rag.txt");
pub const RETRIEVE_AND_PLAN: &str = include_str!("../templates/retrieve_and_plan.txt");
pub const PLAN_AND_RETRIEVE: &str = include_str!("../templates/plan_and_retrieve.txt");
pub const JUDGE: &str = include_str!("../templates/judge.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template references unknown placeholder {{{0}}}")]
    MissingVar(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
}

/// Substitutes `{name}` placeholders; `{{`/`}}` emit literal braces.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '{' => {
                if matches!(chars.peek(), Some((_, '{'))) {
                    chars.next();
                    out.push('{');
                    continue;
                }
                let mut name = String::new();
                let mut closed = false;
                for (_, nc) in chars.by_ref() {
                    if nc == '}' {
                        closed = true;
                        break;
                    }
                    name.push(nc);
                }
                if !closed {
                    return Err(PromptError::Unterminated(pos));
                }
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => return Err(PromptError::MissingVar(name)),
                }
            }
            '}' => {
                if matches!(chars.peek(), Some((_, '}'))) {
                    chars.next();
                }
                out.push('}');
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// `CHUNK[i]: text` lines, one per chunk, 1-based.
pub fn chunk_list(texts: &[&str]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("CHUNK[{}]: {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

static CHUNK_INDEX_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"CHUNK\[(\d+)\]\s*:").expect("static regex"));

/// Matches `CHUNK[i]:` headers; shared by the mock backend's canned rules.
pub fn chunk_index_re() -> &'static Regex {
    &CHUNK_INDEX_RE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_and_escapes() {
        let out = render("a {x} b {{literal}} {y}", &[("x", "1"), ("y", "2")]).unwrap();
        assert_eq!(out, "a 1 b {literal} 2");
        assert_eq!(
            render("{missing}", &[]),
            Err(PromptError::MissingVar("missing".into()))
        );
        assert_eq!(render("{open", &[]), Err(PromptError::Unterminated(0)));
    }

    #[test]
    fn templates_render_with_expected_placeholders() {
        let rst = render(RST_TREE, &[("relation_definitions", RST_RELATION_DEFINITIONS), ("chunk", "X")])
            .unwrap();
        assert!(rst.contains("TREE STRUCTURE:"));
        assert!(rst.contains("{RELATION TYPE}"));
        assert!(rst.ends_with("TEXT TO ANALYZE: X\n"));

        let graph = render(
            GRAPH,
            &[("relation_definitions", GRAPH_RELATION_DEFINITIONS), ("chunks", "CHUNK[1]: a")],
        )
        .unwrap();
        assert!(graph.contains("{RELATION_TYPE}"));

        for (template, n_placeholders) in [
            (PLAN, 1),
            (GENERATE_DISCO, 1),
            (FULL_CONTEXT, 1),
            (STANDARD_RAG, 1),
            (RETRIEVE_AND_PLAN, 1),
            (PLAN_AND_RETRIEVE, 1),
        ] {
            let rendered = render(template, &[("inputs", "INPUT-SECTIONS")]).unwrap();
            assert!(rendered.contains("INPUT-SECTIONS"));
            assert_eq!(template.matches("{inputs}").count(), n_placeholders);
        }
        let judged = render(
            JUDGE,
            &[("query", "q"), ("reference", "r"), ("candidate", "c")],
        )
        .unwrap();
        assert!(judged.contains("Score:"));
    }

    #[test]
    fn chunk_list_is_one_based() {
        assert_eq!(chunk_list(&["a", "b"]), "CHUNK[1]: a\nCHUNK[2]: b");
    }
}
