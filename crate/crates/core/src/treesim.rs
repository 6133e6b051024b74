//! Bracketed constituency trees, smallest-phrase subtrees and PARSEVAL
//! scoring between subtrees of different tokens.
//!
//! Subtrees are compared as multisets of labeled spans local to the subtree
//! (positions renumbered from 0). Terminal strings never enter a
//! comparison; only phrase labels, span boundaries and preterminal tags do.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::knn::NeighborList;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("empty tree")]
    EmptyTree,
    #[error("more than one root tree on the line")]
    MultipleRoots,
    #[error("malformed tree at byte {position}: {reason}")]
    Malformed { position: usize, reason: String },
    #[error("leaf index {index} out of range for a tree with {len} leaves")]
    LeafIndexOutOfRange { index: usize, len: usize },
    #[error("subtree has no brackets")]
    EmptySubtree,
}

pub type Result<T, E = TreeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    /// Phrase label, POS tag, or terminal string for leaves.
    pub label: String,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    /// Leaf index range `[start, end)` covered by the node.
    pub span: (usize, usize),
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Rooted ordered constituency tree stored as an arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstTree {
    nodes: Vec<Node>,
    root: usize,
    leaves: Vec<usize>,
}

#[derive(Debug)]
enum Token<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Token::Open(i));
                i += 1;
            }
            b')' => {
                out.push(Token::Close(i));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                out.push(Token::Atom(start, &line[start..i]));
            }
        }
    }
    out
}

/// Intermediate parse node before validation.
struct Raw {
    label: Option<String>,
    children: Vec<RawChild>,
    open: usize,
}

enum RawChild {
    Node(Raw),
    Leaf(String),
}

fn malformed(position: usize, reason: &str) -> TreeError {
    TreeError::Malformed { position, reason: reason.to_string() }
}

/// Parses one Penn-style bracketed tree, e.g. `(S (NP (DT the) (NN law)) (VP (VBD passed)))`.
/// An unlabeled outer wrapper such as `( (S ...) )` is removed.
pub fn parse_bracketed(line: &str) -> Result<ConstTree> {
    let tokens = tokenize(line);
    if tokens.is_empty() {
        return Err(TreeError::EmptyTree);
    }
    let mut stack: Vec<Raw> = Vec::new();
    let mut done: Option<Raw> = None;
    for tok in tokens {
        if done.is_some() {
            return Err(match tok {
                Token::Close(p) => TreeError::UnbalancedParens(p),
                _ => TreeError::MultipleRoots,
            });
        }
        match tok {
            Token::Open(p) => stack.push(Raw { label: None, children: Vec::new(), open: p }),
            Token::Atom(p, text) => {
                let top = stack.last_mut().ok_or_else(|| malformed(p, "terminal outside brackets"))?;
                if top.label.is_none() && top.children.is_empty() {
                    top.label = Some(text.to_string());
                } else {
                    top.children.push(RawChild::Leaf(text.to_string()));
                }
            }
            Token::Close(p) => {
                let node = stack.pop().ok_or(TreeError::UnbalancedParens(p))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(RawChild::Node(node)),
                    None => done = Some(node),
                }
            }
        }
    }
    if let Some(open) = stack.first() {
        return Err(TreeError::UnbalancedParens(open.open));
    }
    let mut root = done.ok_or(TreeError::EmptyTree)?;
    while root.label.is_none() {
        match root.children.len() {
            0 => return Err(TreeError::EmptyTree),
            1 => match root.children.pop().unwrap() {
                RawChild::Node(inner) => root = inner,
                RawChild::Leaf(_) => return Err(malformed(root.open, "terminal without a tag")),
            },
            _ => return Err(TreeError::MultipleRoots),
        }
    }
    let mut tree = ConstTree { nodes: Vec::new(), root: 0, leaves: Vec::new() };
    tree.root = tree.build(root, None)?;
    Ok(tree)
}

impl ConstTree {
    fn build(&mut self, raw: Raw, parent: Option<usize>) -> Result<usize> {
        let label = raw.label.ok_or_else(|| malformed(raw.open, "unlabeled constituent"))?;
        if raw.children.is_empty() {
            return Err(malformed(raw.open, "constituent without children"));
        }
        let has_leaf = raw.children.iter().any(|c| matches!(c, RawChild::Leaf(_)));
        if has_leaf && raw.children.len() != 1 {
            return Err(malformed(raw.open, "terminal must be the only child of its tag"));
        }
        let id = self.nodes.len();
        let start = self.leaves.len();
        self.nodes.push(Node { label, children: Vec::new(), parent, span: (start, start) });
        let mut children = Vec::with_capacity(raw.children.len());
        for child in raw.children {
            let cid = match child {
                RawChild::Leaf(text) => {
                    let cid = self.nodes.len();
                    let pos = self.leaves.len();
                    self.nodes.push(Node { label: text, children: Vec::new(), parent: Some(id), span: (pos, pos + 1) });
                    self.leaves.push(cid);
                    cid
                }
                RawChild::Node(inner) => self.build(inner, Some(id))?,
            };
            children.push(cid);
        }
        self.nodes[id].children = children;
        self.nodes[id].span = (start, self.leaves.len());
        Ok(id)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_preterminal(&self, id: usize) -> bool {
        let n = &self.nodes[id];
        n.children.len() == 1 && self.nodes[n.children[0]].is_leaf()
    }

    /// Terminal strings with PTB bracket escapes undone.
    pub fn terminals(&self) -> Vec<String> {
        self.leaves.iter().map(|&l| unescape(&self.nodes[l].label).to_string()).collect()
    }

    pub fn preterminal_tags(&self) -> Vec<&str> {
        self.leaves.iter().map(|&l| self.nodes[self.nodes[l].parent.unwrap()].label.as_str()).collect()
    }

    /// Copy of the tree with every terminal string replaced.
    pub fn map_terminals<F: FnMut(usize, &str) -> String>(&self, mut f: F) -> ConstTree {
        let mut out = self.clone();
        for (i, &l) in self.leaves.iter().enumerate() {
            out.nodes[l].label = f(i, &self.nodes[l].label);
        }
        out
    }

    /// Bracketed rendering; round-trips through `parse_bracketed`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(self.root, &mut s);
        s
    }

    fn render_into(&self, id: usize, out: &mut String) {
        let n = &self.nodes[id];
        if n.is_leaf() {
            out.push_str(&n.label);
            return;
        }
        out.push('(');
        out.push_str(&n.label);
        for &c in &n.children {
            out.push(' ');
            self.render_into(c, out);
        }
        out.push(')');
    }
}

pub fn unescape(token: &str) -> &str {
    match token {
        "-LRB-" => "(",
        "-RRB-" => ")",
        "-LCB-" => "{",
        "-RCB-" => "}",
        "-LSB-" => "[",
        "-RSB-" => "]",
        other => other,
    }
}

/// Label with functional annotations removed (`NP-SBJ-1` -> `NP`, `S=2` -> `S`).
/// Labels starting with `-` (`-NONE-`, `-LRB-`) are kept whole.
pub fn base_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) => &label[..i],
        None => label,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Phrase structure of one token's smallest-phrase subtree, leaves dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtreeSpan {
    /// Sorted multiset of non-preterminal brackets, including the subtree root.
    pub spans: Vec<LabeledSpan>,
    pub preterminals: Vec<String>,
    pub leaf_count: usize,
}

impl SubtreeSpan {
    pub fn new(mut spans: Vec<LabeledSpan>, preterminals: Vec<String>) -> Self {
        spans.sort();
        let leaf_count = preterminals.len();
        SubtreeSpan { spans, preterminals, leaf_count }
    }
}

/// Subtree rooted at the lowest non-preterminal ancestor of a leaf.
///
/// A tree that is a single preterminal yields that preterminal as its own
/// one-bracket subtree.
pub fn smallest_phrase_subtree(tree: &ConstTree, leaf_index: usize) -> Result<SubtreeSpan> {
    let leaf = *tree
        .leaves
        .get(leaf_index)
        .ok_or(TreeError::LeafIndexOutOfRange { index: leaf_index, len: tree.leaf_count() })?;
    let pre = tree.nodes[leaf].parent.expect("leaf without parent");
    let Some(phrase) = tree.nodes[pre].parent else {
        let tag = tree.nodes[pre].label.clone();
        return Ok(SubtreeSpan::new(
            vec![LabeledSpan { label: base_label(&tag).to_string(), start: 0, end: 1 }],
            vec![tag],
        ));
    };
    let base = tree.nodes[phrase].span.0;
    let mut spans = Vec::new();
    let mut preterminals = Vec::new();
    let mut stack = vec![phrase];
    while let Some(id) = stack.pop() {
        let n = &tree.nodes[id];
        if tree.is_preterminal(id) {
            preterminals.push((n.span.0, n.label.clone()));
            continue;
        }
        spans.push(LabeledSpan {
            label: base_label(&n.label).to_string(),
            start: n.span.0 - base,
            end: n.span.1 - base,
        });
        stack.extend(n.children.iter().rev());
    }
    preterminals.sort_by_key(|p| p.0);
    Ok(SubtreeSpan::new(spans, preterminals.into_iter().map(|p| p.1).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsevalScores {
    pub matched: usize,
    pub gold_brackets: usize,
    pub candidate_brackets: usize,
    pub precision: f64,
    pub recall: f64,
    pub complete_match: bool,
    /// Candidate brackets crossing at least one gold bracket.
    pub crossing: usize,
    pub tag_accuracy: f64,
}

fn crosses(a: &LabeledSpan, b: &LabeledSpan) -> bool {
    (a.start < b.start && b.start < a.end && a.end < b.end) || (b.start < a.start && a.start < b.end && b.end < a.end)
}

/// PARSEVAL between two subtrees, `gold` being the query token's.
pub fn parseval(gold: &SubtreeSpan, candidate: &SubtreeSpan) -> Result<ParsevalScores> {
    if gold.spans.is_empty() || candidate.spans.is_empty() || gold.leaf_count == 0 || candidate.leaf_count == 0 {
        return Err(TreeError::EmptySubtree);
    }
    let mut pool: BTreeMap<&LabeledSpan, usize> = BTreeMap::new();
    for s in &gold.spans {
        *pool.entry(s).or_insert(0) += 1;
    }
    let mut matched = 0;
    for s in &candidate.spans {
        if let Some(k) = pool.get_mut(s) {
            if *k > 0 {
                *k -= 1;
                matched += 1;
            }
        }
    }
    let crossing = candidate.spans.iter().filter(|c| gold.spans.iter().any(|g| crosses(c, g))).count();
    let tag_hits = gold.preterminals.iter().zip(&candidate.preterminals).filter(|(a, b)| a == b).count();
    Ok(ParsevalScores {
        matched,
        gold_brackets: gold.spans.len(),
        candidate_brackets: candidate.spans.len(),
        precision: matched as f64 / candidate.spans.len() as f64,
        recall: matched as f64 / gold.spans.len() as f64,
        complete_match: gold.spans == candidate.spans,
        crossing,
        tag_accuracy: tag_hits as f64 / gold.leaf_count.max(candidate.leaf_count) as f64,
    })
}

/// Subtree of every occurrence row, shared between rows of the same word.
#[derive(Debug, Clone, Default)]
pub struct SubtreeAssignment {
    subtrees: Vec<SubtreeSpan>,
    by_row: Vec<Option<usize>>,
}

impl SubtreeAssignment {
    pub fn new(rows: usize) -> Self {
        SubtreeAssignment { subtrees: Vec::new(), by_row: vec![None; rows] }
    }

    /// Stores a subtree and returns its handle for `assign`.
    pub fn push(&mut self, subtree: SubtreeSpan) -> usize {
        self.subtrees.push(subtree);
        self.subtrees.len() - 1
    }

    pub fn assign(&mut self, row: usize, handle: usize) {
        self.by_row[row] = Some(handle);
    }

    pub fn get(&self, row: usize) -> Option<&SubtreeSpan> {
        self.by_row.get(row).copied().flatten().map(|h| &self.subtrees[h])
    }

    pub fn assigned_rows(&self) -> usize {
        self.by_row.iter().filter(|h| h.is_some()).count()
    }
}

/// Mean PARSEVAL scores over (query, neighbor) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeSimSummary {
    pub precision: f64,
    pub recall: f64,
    /// Mean complete-match indicator.
    pub matched_brackets: f64,
    /// Mean crossing count.
    pub cross_brackets: f64,
    pub tag_accuracy: f64,
    pub pair_count: usize,
    /// Pairs where either side has no subtree.
    pub skipped_pairs: usize,
}

#[derive(Default, Clone, Copy)]
struct Totals {
    precision: f64,
    recall: f64,
    complete: f64,
    crossing: f64,
    tags: f64,
    pairs: usize,
    skipped: usize,
}

impl Totals {
    fn add(&mut self, s: &ParsevalScores) {
        self.precision += s.precision;
        self.recall += s.recall;
        self.complete += s.complete_match as u8 as f64;
        self.crossing += s.crossing as f64;
        self.tags += s.tag_accuracy;
        self.pairs += 1;
    }
}

/// Averages PARSEVAL over every (query, neighbor) pair, query as gold.
/// Per-pair scores are computed in parallel and summed in list order.
pub fn average_treesim(lists: &[NeighborList], subtrees: &SubtreeAssignment) -> TreeSimSummary {
    let per_list: Vec<(Vec<ParsevalScores>, usize)> = lists
        .par_iter()
        .map(|list| {
            let mut scores = Vec::with_capacity(list.entries.len());
            let mut skipped = 0;
            let gold = subtrees.get(list.query);
            for e in &list.entries {
                match (gold, subtrees.get(e.row)) {
                    (Some(g), Some(c)) => match parseval(g, c) {
                        Ok(s) => scores.push(s),
                        Err(_) => skipped += 1,
                    },
                    _ => skipped += 1,
                }
            }
            (scores, skipped)
        })
        .collect();
    let mut t = Totals::default();
    for (scores, skipped) in &per_list {
        for s in scores {
            t.add(s);
        }
        t.skipped += skipped;
    }
    summarize(t)
}

/// Averages precomputed pair scores in the given order.
pub fn average_scores<'a, I: IntoIterator<Item = &'a ParsevalScores>>(scores: I) -> TreeSimSummary {
    let mut t = Totals::default();
    for s in scores {
        t.add(s);
    }
    summarize(t)
}

fn summarize(t: Totals) -> TreeSimSummary {
    let n = t.pairs as f64;
    TreeSimSummary {
        precision: t.precision / n,
        recall: t.recall / n,
        matched_brackets: t.complete / n,
        cross_brackets: t.crossing / n,
        tag_accuracy: t.tags / n,
        pair_count: t.pairs,
        skipped_pairs: t.skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::Neighbor;

    const SENT: &str = "(S (NP (DT the) (NN law)) (VP (VBD passed)))";

    fn span(label: &str, start: usize, end: usize) -> LabeledSpan {
        LabeledSpan { label: label.into(), start, end }
    }

    fn sub(spans: &[(&str, usize, usize)], tags: &[&str]) -> SubtreeSpan {
        SubtreeSpan::new(
            spans.iter().map(|&(l, s, e)| span(l, s, e)).collect(),
            tags.iter().map(|t| t.to_string()).collect(),
        )
    }

    #[test]
    fn parses_examples() {
        let t = parse_bracketed(SENT).unwrap();
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.terminals(), vec!["the", "law", "passed"]);
        assert_eq!(t.preterminal_tags(), vec!["DT", "NN", "VBD"]);
        assert_eq!(t.render(), SENT);
        assert!(matches!(parse_bracketed("(S (NP (DT the)"), Err(TreeError::UnbalancedParens(_))));
        assert_eq!(parse_bracketed("(X a)(Y b)"), Err(TreeError::MultipleRoots));
        assert_eq!(parse_bracketed("   "), Err(TreeError::EmptyTree));
        assert_eq!(parse_bracketed("(S (NN a)))"), Err(TreeError::UnbalancedParens(10)));
    }

    #[test]
    fn malformed_trees() {
        assert!(matches!(parse_bracketed("(NP a (NN b))"), Err(TreeError::Malformed { .. })));
        assert!(matches!(parse_bracketed("(NP)"), Err(TreeError::Malformed { .. })));
        assert!(matches!(parse_bracketed("word"), Err(TreeError::Malformed { .. })));
        assert_eq!(parse_bracketed("()"), Err(TreeError::EmptyTree));
    }

    #[test]
    fn strips_outer_wrapper_and_unescapes() {
        let t = parse_bracketed("( (S (NP (-LRB- -LRB-) (NN x) (-RRB- -RRB-))) )").unwrap();
        assert_eq!(t.node(t.root()).label, "S");
        assert_eq!(t.terminals(), vec!["(", "x", ")"]);
    }

    #[test]
    fn smallest_phrase_examples() {
        let t = parse_bracketed(SENT).unwrap();
        assert_eq!(smallest_phrase_subtree(&t, 1).unwrap(), sub(&[("NP", 0, 2)], &["DT", "NN"]));
        assert_eq!(smallest_phrase_subtree(&t, 2).unwrap(), sub(&[("VP", 0, 1)], &["VBD"]));
        let t = parse_bracketed("(NP (NN dog))").unwrap();
        assert_eq!(smallest_phrase_subtree(&t, 0).unwrap(), sub(&[("NP", 0, 1)], &["NN"]));
        assert_eq!(smallest_phrase_subtree(&t, 1), Err(TreeError::LeafIndexOutOfRange { index: 1, len: 1 }));
    }

    #[test]
    fn smallest_phrase_keeps_nested_brackets_and_strips_functions() {
        let t = parse_bracketed("(S (NP-SBJ (NP (DT a) (NN b)) (PP (IN of) (NP (NN c)))) (VP (VBZ is)))").unwrap();
        let s = smallest_phrase_subtree(&t, 2).unwrap();
        assert_eq!(s, sub(&[("PP", 0, 2), ("NP", 1, 2)], &["IN", "NN"]));
        let s = smallest_phrase_subtree(&t, 0).unwrap();
        assert_eq!(s, sub(&[("NP", 0, 2)], &["DT", "NN"]));
    }

    #[test]
    fn single_preterminal_tree() {
        let t = parse_bracketed("(NN dog)").unwrap();
        assert_eq!(smallest_phrase_subtree(&t, 0).unwrap(), sub(&[("NN", 0, 1)], &["NN"]));
    }

    #[test]
    fn parseval_examples() {
        let a = sub(&[("NP", 0, 2)], &["DT", "NN"]);
        let s = parseval(&a, &a).unwrap();
        assert_eq!((s.precision, s.recall, s.complete_match, s.crossing, s.tag_accuracy), (1.0, 1.0, true, 0, 1.0));

        let b = sub(&[("NP", 0, 2)], &["DT", "JJ"]);
        let s = parseval(&a, &b).unwrap();
        assert_eq!((s.precision, s.recall, s.tag_accuracy), (1.0, 1.0, 0.5));

        let gold = sub(&[("NP", 0, 2), ("VP", 2, 4), ("S", 0, 4)], &["A", "B", "C", "D"]);
        let cand = sub(&[("X", 1, 3), ("S", 0, 4)], &["A", "B", "C", "D"]);
        let s = parseval(&gold, &cand).unwrap();
        assert_eq!(s.matched, 1);
        assert_eq!((s.precision, s.recall, s.crossing), (0.5, 1.0 / 3.0, 1));
        assert!(!s.complete_match);

        let empty = sub(&[], &[]);
        assert_eq!(parseval(&empty, &a), Err(TreeError::EmptySubtree));
    }

    #[test]
    fn tag_accuracy_divides_by_longer_yield() {
        let g = sub(&[("NP", 0, 3)], &["DT", "JJ", "NN"]);
        let c = sub(&[("NP", 0, 2)], &["DT", "NN"]);
        assert!((parseval(&g, &c).unwrap().tag_accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_brackets_match_as_multiset() {
        let g = sub(&[("NP", 0, 1), ("NP", 0, 1)], &["NN"]);
        let c = sub(&[("NP", 0, 1)], &["NN"]);
        let s = parseval(&g, &c).unwrap();
        assert_eq!((s.matched, s.precision, s.recall), (1, 1.0, 0.5));
    }

    #[test]
    fn average_over_pairs() {
        let mut a = SubtreeAssignment::new(4);
        let h0 = a.push(sub(&[("NP", 0, 1)], &["NN"]));
        let h1 = a.push(sub(&[("VP", 0, 1)], &["VB"]));
        a.assign(0, h0);
        a.assign(1, h0);
        a.assign(2, h1);
        let lists = vec![NeighborList {
            query: 0,
            entries: vec![
                Neighbor { row: 1, score: 0.9 },
                Neighbor { row: 2, score: 0.8 },
                Neighbor { row: 3, score: 0.7 },
            ],
            short: false,
        }];
        let s = average_treesim(&lists, &a);
        assert_eq!(s.pair_count, 2);
        assert_eq!(s.skipped_pairs, 1);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.matched_brackets, 0.5);
        assert_eq!(s.tag_accuracy, 0.5);
    }
}
