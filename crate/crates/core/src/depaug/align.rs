//! Word <-> token alignment through character spans.
//!
//! A token maps to the minimal set of words covering it, and a word set maps
//! to the minimal set of tokens covering those words. With non-overlapping
//! spans both reduce to "everything that overlaps".

use std::collections::BTreeSet;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::interchange::DepParse;

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Sentence index and words covering response token `token`.
pub fn token_to_words(parse: &DepParse, token: usize) -> Result<(usize, BTreeSet<usize>)> {
    let span = parse
        .token_char_spans
        .get(token)
        .ok_or(Error::SpanOutOfRange {
            index: token,
            len: parse.token_char_spans.len(),
        })?;
    let misaligned = || Error::Misaligned {
        token,
        start: span.start,
        end: span.end,
    };
    let sent_idx = parse.sentence_index_of(token).ok_or_else(misaligned)?;
    let sent = &parse.sentences[sent_idx];
    let words: BTreeSet<usize> = sent
        .word_char_spans
        .iter()
        .enumerate()
        .filter(|(_, w)| overlaps(w, span))
        .map(|(w, _)| w)
        .collect();
    if words.is_empty() {
        return Err(misaligned());
    }
    Ok((sent_idx, words))
}

/// Tokens of sentence `sentence` covering any word in `words`.
pub fn words_to_tokens(parse: &DepParse, sentence: usize, words: &BTreeSet<usize>) -> BTreeSet<usize> {
    let sent = &parse.sentences[sentence];
    let word_spans: Vec<&Range<usize>> = words
        .iter()
        .filter_map(|&w| sent.word_char_spans.get(w))
        .collect();
    if word_spans.is_empty() {
        return BTreeSet::new();
    }
    sent.token_range
        .clone()
        .filter(|&t| {
            let ts = &parse.token_char_spans[t];
            word_spans.iter().any(|ws| overlaps(ws, ts))
        })
        .collect()
}
