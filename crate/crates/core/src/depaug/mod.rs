//! Dependency-parse augmentation.
//!
//! For a response token, the words of its atomic fact are approximated by
//! the clause under its closest verb ancestor, with coordinated constituents
//! unrelated to the token pruned away. The token's evidence is then the sum
//! of the evidence of every token in that set.

mod align;
mod coord;
mod tree;

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

pub use align::{token_to_words, words_to_tokens};
pub use coord::{find_coordinations, prune_coordinations, reform_tree, Coordination};
pub use tree::{closest_verb_ancestor, collect_successors, tree_path, VerbTags};

use crate::attribution::{union_maps, Augmenter, EvidenceMap};
use crate::error::Result;
use crate::interchange::{DepParse, SentenceParse};

/// Coordinations and reformed heads of one sentence; independent of the target.
#[derive(Debug, Clone)]
pub struct SentenceStructure {
    pub coordinations: Vec<Coordination>,
    pub reformed_head: Vec<Option<usize>>,
}

impl SentenceStructure {
    pub fn analyze(sent: &SentenceParse) -> Result<Self> {
        let coordinations = find_coordinations(&sent.head, &sent.label);
        let reformed_head = reform_tree(&sent.head, &coordinations)?;
        Ok(SentenceStructure {
            coordinations,
            reformed_head,
        })
    }
}

/// Atomic-fact words of `word`: the pruned clause of its closest verb
/// ancestor, empty when no verb heads it. Punctuation is left out.
pub fn atomic_fact_words(
    sent: &SentenceParse,
    structure: &SentenceStructure,
    word: usize,
    verbs: &VerbTags,
) -> BTreeSet<usize> {
    let Some(v) = closest_verb_ancestor(sent, word, verbs) else {
        return BTreeSet::new();
    };
    let path = tree_path(&structure.reformed_head, v, word)
        .or_else(|| tree_path(&sent.head, v, word))
        .unwrap_or_else(|| vec![v]);
    let removed = prune_coordinations(sent.len(), &path, &structure.coordinations);
    tree::collect_pruned(
        &structure.reformed_head,
        &sent.is_punct,
        v,
        &removed,
    )
}

/// `A(r_i)`: response tokens whose evidence augments token `token`. Always
/// contains the token and stays inside its sentence.
pub fn atomic_fact_elements(parse: &DepParse, token: usize, verbs: &VerbTags) -> Result<BTreeSet<usize>> {
    let (sent_idx, words) = token_to_words(parse, token)?;
    let sent = &parse.sentences[sent_idx];
    let structure = SentenceStructure::analyze(sent)?;
    Ok(elements_with(parse, sent_idx, &structure, &words, token, verbs))
}

fn elements_with(
    parse: &DepParse,
    sent_idx: usize,
    structure: &SentenceStructure,
    words: &BTreeSet<usize>,
    token: usize,
    verbs: &VerbTags,
) -> BTreeSet<usize> {
    let sent = &parse.sentences[sent_idx];
    let mut fact_words = BTreeSet::new();
    for &w in words {
        fact_words.extend(atomic_fact_words(sent, structure, w, verbs));
    }
    let mut tokens = words_to_tokens(parse, sent_idx, &fact_words);
    tokens.insert(token);
    tokens
}

/// Sum of the member tokens' maps.
pub fn augment_map(maps: &[EvidenceMap], members: &BTreeSet<usize>) -> EvidenceMap {
    union_maps(members.iter().map(|&a| &maps[a]))
}

/// Memoized `A(r_i)` for every token of one parsed response.
#[derive(Debug)]
pub struct AtomicFactSet {
    parse: Arc<DepParse>,
    verbs: VerbTags,
    structures: Vec<OnceLock<Result<SentenceStructure, String>>>,
    facts: Vec<OnceLock<Vec<usize>>>,
}

impl AtomicFactSet {
    pub fn new(parse: Arc<DepParse>, verbs: VerbTags) -> Self {
        let n = parse.token_char_spans.len();
        let s = parse.sentences.len();
        AtomicFactSet {
            parse,
            verbs,
            structures: (0..s).map(|_| OnceLock::new()).collect(),
            facts: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn parse(&self) -> &DepParse {
        &self.parse
    }

    fn structure(&self, sent_idx: usize) -> Result<&SentenceStructure> {
        self.structures[sent_idx]
            .get_or_init(|| SentenceStructure::analyze(&self.parse.sentences[sent_idx]).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|m| crate::error::Error::Internal(m.clone()))
    }

    /// Sorted `A(r_i)` for `token`.
    pub fn elements(&self, token: usize) -> Result<&[usize]> {
        if let Some(v) = self.facts.get(token).and_then(OnceLock::get) {
            return Ok(v);
        }
        let (sent_idx, words) = token_to_words(&self.parse, token)?;
        let structure = self.structure(sent_idx)?;
        let set = elements_with(&self.parse, sent_idx, structure, &words, token, &self.verbs);
        Ok(self.facts[token].get_or_init(|| set.into_iter().collect()))
    }

    /// Union of `A(r_i)` over the tokens of a span.
    pub fn expand<I: IntoIterator<Item = usize>>(&self, tokens: I) -> Result<BTreeSet<usize>> {
        let mut out = BTreeSet::new();
        for t in tokens {
            out.extend(self.elements(t)?.iter().copied());
        }
        Ok(out)
    }
}

impl Augmenter for AtomicFactSet {
    fn members(&self, token: usize) -> Result<Vec<usize>> {
        self.elements(token).map(<[usize]>::to_vec)
    }
}
