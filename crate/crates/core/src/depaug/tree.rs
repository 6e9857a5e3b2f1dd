use std::collections::{BTreeSet, HashSet};

use crate::interchange::{children_of, SentenceParse};

/// POS tags treated as verbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbTags(HashSet<String>);

impl Default for VerbTags {
    /// Penn Treebank verb tags.
    fn default() -> Self {
        VerbTags::new(["VB", "VBD", "VBG", "VBN", "VBP", "VBZ"])
    }
}

impl VerbTags {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        VerbTags(tags.into_iter().map(Into::into).collect())
    }

    pub fn is_verb(&self, pos: &str) -> bool {
        self.0.contains(pos)
    }
}

/// First verb on the chain `word -> head -> ... -> root`, starting with the
/// word itself.
pub fn closest_verb_ancestor(sent: &SentenceParse, word: usize, verbs: &VerbTags) -> Option<usize> {
    let mut cur = Some(word);
    let mut steps = 0;
    while let Some(w) = cur {
        if verbs.is_verb(&sent.pos[w]) {
            return Some(w);
        }
        steps += 1;
        if steps > sent.len() {
            return None;
        }
        cur = sent.head[w];
    }
    None
}

/// `v` and all its descendants, minus punctuation.
pub fn collect_successors(sent: &SentenceParse, v: usize) -> BTreeSet<usize> {
    collect_pruned(&sent.head, &sent.is_punct, v, &vec![false; sent.len()])
}

/// Descendants of `v` (and `v`) under `head`, not entering any word marked
/// in `removed` other than `v` itself, and leaving out punctuation.
pub(crate) fn collect_pruned(
    head: &[Option<usize>],
    is_punct: &[bool],
    v: usize,
    removed: &[bool],
) -> BTreeSet<usize> {
    let children = children_of(head);
    let mut out = BTreeSet::new();
    let mut stack = vec![v];
    let mut seen = vec![false; head.len()];
    while let Some(w) = stack.pop() {
        if seen[w] {
            continue;
        }
        seen[w] = true;
        if !is_punct[w] {
            out.insert(w);
        }
        stack.extend(children[w].iter().copied().filter(|&c| !removed[c]));
    }
    out
}

/// Words from `from` down to `to`, inclusive, when `from` is an ancestor of
/// (or equal to) `to` under `head`.
pub fn tree_path(head: &[Option<usize>], from: usize, to: usize) -> Option<Vec<usize>> {
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = head[cur]?;
        if path.len() > head.len() {
            return None;
        }
        path.push(cur);
    }
    path.reverse();
    Some(path)
}
