//! Dependency-graph serialization, character-level graph construction and
//! the word→char→phone length regulators.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{DepAnnotation, Tagset, Utterance};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("expected {expected} rows, got {found}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out = 0,
    In = 1,
}

/// One directed, labelled entry; messages flow from `src` to `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: usize,
    pub direction: Direction,
}

/// Character graph with BOS at node 0 and EOS at the last node. Every
/// `Out` entry has a mirrored `In` entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharGraph {
    pub num_nodes: usize,
    pub edges: Vec<Edge>,
    pub node_char_index: Vec<Option<usize>>,
}

impl CharGraph {
    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        self.num_nodes - 1
    }

    pub fn num_chars(&self) -> usize {
        self.num_nodes - 2
    }

    /// Node holding character `i`.
    pub fn char_node(i: usize) -> usize {
        i + 1
    }

    fn push(&mut self, src: usize, dst: usize, relation: usize) {
        self.edges.push(Edge {
            src,
            dst,
            relation,
            direction: Direction::Out,
        });
        self.edges.push(Edge {
            src: dst,
            dst: src,
            relation,
            direction: Direction::In,
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }
}

/// Which edge families to include when lifting to characters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphOptions {
    pub dependency_edges: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            dependency_edges: true,
        }
    }
}

/// One relation id per word: the type of its out edge, or ROOT for roots.
pub fn graph2relation(ann: &DepAnnotation, tagset: &Tagset) -> Vec<usize> {
    ann.heads
        .iter()
        .zip(&ann.relations)
        .map(|(h, &r)| if h.is_some() { r } else { tagset.root_id() })
        .collect()
}

pub fn build_char_graph(utt: &Utterance, ann: &DepAnnotation, tagset: &Tagset) -> CharGraph {
    build_char_graph_with(utt, ann, tagset, GraphOptions::default())
}

/// Lifts the word-level dependency graph to characters:
/// SEQ edges between consecutive characters of a word, one edge from the
/// first character of each dependent to the first character of its head,
/// and BOS/EOS edges at the sentence boundaries.
pub fn build_char_graph_with(
    utt: &Utterance,
    ann: &DepAnnotation,
    tagset: &Tagset,
    opts: GraphOptions,
) -> CharGraph {
    let n = utt.num_chars();
    let mut g = CharGraph {
        num_nodes: n + 2,
        edges: Vec::new(),
        node_char_index: std::iter::once(None)
            .chain((0..n).map(Some))
            .chain(std::iter::once(None))
            .collect(),
    };
    let node = CharGraph::char_node;
    for &(s, e) in &utt.word_spans {
        for c in s..e - 1 {
            g.push(node(c), node(c + 1), tagset.seq_id());
        }
    }
    if opts.dependency_edges {
        for (dep, head) in ann.heads.iter().enumerate() {
            if let Some(head) = *head {
                let src = node(utt.word_spans[dep].0);
                let dst = node(utt.word_spans[head].0);
                g.push(src, dst, ann.relations[dep]);
            }
        }
    }
    let last_char = utt.word_spans.last().map(|&(_, e)| e - 1).unwrap_or(0);
    g.push(g.bos(), node(utt.word_spans[0].0), tagset.bos_id());
    let eos = g.eos();
    g.push(node(last_char), eos, tagset.eos_id());
    g
}

/// Repeats each word's row once per character of the word.
pub fn expand_word_to_char<T: Clone>(values: &[T], utt: &Utterance) -> Result<Vec<T>, GraphError> {
    if values.len() != utt.num_words() {
        return Err(GraphError::LengthMismatch {
            expected: utt.num_words(),
            found: values.len(),
        });
    }
    Ok(utt
        .word_spans
        .iter()
        .zip(values)
        .flat_map(|(&(s, e), v)| std::iter::repeat_n(v.clone(), e - s))
        .collect())
}

/// Repeats each character's row `phones_per_char[i]` times.
pub fn expand_char_to_phone<T: Clone>(values: &[T], utt: &Utterance) -> Result<Vec<T>, GraphError> {
    if values.len() != utt.num_chars() {
        return Err(GraphError::LengthMismatch {
            expected: utt.num_chars(),
            found: values.len(),
        });
    }
    Ok(utt
        .phones_per_char
        .iter()
        .zip(values)
        .flat_map(|(&k, v)| std::iter::repeat_n(v.clone(), k as usize))
        .collect())
}
