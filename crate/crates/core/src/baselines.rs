//! Comparison methods: sliding-window hidden-state similarity (with and
//! without dependency expansion), the union pipeline over hidden-state
//! cosine, whole-sentence spans, and augmentation by response self-attention.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_span, AttributionEngine, Augmenter, EngineConfig, EvidenceSet, Tau};
use crate::depaug::AtomicFactSet;
use crate::error::{Error, Result};
use crate::interchange::{ColumnSpace, HiddenStates, SimilarityMatrix, TokenizedInstance};
use crate::similarity::hidden_cosine;
use crate::span::Span;

/// The best-scoring document window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    /// First flattened document token of the window.
    pub start: usize,
    pub width: usize,
    pub score: f64,
}

impl WindowScore {
    pub fn tokens(&self) -> Range<usize> {
        self.start..self.start + self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HssResult {
    pub window: WindowScore,
    pub passage: usize,
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
        count += 1;
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Passage holding most of the window's tokens; the start token's passage
/// wins ties.
pub fn window_passage(inst: &TokenizedInstance, window: Range<usize>) -> usize {
    let start_passage = inst.passage_of(window.start).unwrap_or(0);
    let mut counts = vec![0usize; inst.num_passages()];
    for j in window {
        if let Some(p) = inst.passage_of(j) {
            counts[p] += 1;
        }
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    if counts.get(start_passage) == Some(&best) {
        start_passage
    } else {
        counts.iter().position(|&c| c == best).unwrap_or(start_passage)
    }
}

/// Scores every stride-1 window of width `width` over the documents by the
/// cosine between its mean hidden state and the span's mean hidden state.
/// The span mean is recomputed on every call.
pub fn window_scores(
    inst: &TokenizedInstance,
    h: &HiddenStates,
    span: &Span,
    width: usize,
) -> Result<Vec<f64>> {
    h.check_against(inst)?;
    span.check_within(inst.num_response_tokens())?;
    let c = inst.num_doc_tokens();
    if width == 0 || width > c {
        return Err(Error::InvalidArgument(format!(
            "window width {width} must be in [1, {c}]"
        )));
    }
    let dim = h.dim();
    let span_mean = mean_of(span.iter().map(|i| h.response_row(i)), dim);
    let span_norm = norm(&span_mean);
    if span_norm == 0.0 {
        return Err(Error::ZeroNorm {
            which: "span mean",
            row: span.first().unwrap_or(0),
        });
    }
    let o = inst.doc_offset;
    (0..=c - width)
        .map(|start| {
            let wmean = mean_of((start..start + width).map(|j| h.prompt_row(o + j)), dim);
            let wnorm = norm(&wmean);
            if wnorm == 0.0 {
                return Err(Error::ZeroNorm {
                    which: "window mean",
                    row: start,
                });
            }
            let dot: f64 = span_mean.iter().zip(&wmean).map(|(a, b)| a * b).sum();
            Ok(dot / (span_norm * wnorm))
        })
        .collect()
}

pub fn hss_avg(inst: &TokenizedInstance, h: &HiddenStates, span: &Span, width: usize) -> Result<HssResult> {
    let scores = window_scores(inst, h, span, width)?;
    let (start, score) = scores
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, b)) if s <= b => best,
            _ => Some((i, s)),
        })
        .expect("at least one window");
    Ok(HssResult {
        window: WindowScore { start, width, score },
        passage: window_passage(inst, start..start + width),
    })
}

/// `hss_avg` over the span expanded by the atomic-fact sets of its tokens.
pub fn hss_avg_dep(
    inst: &TokenizedInstance,
    h: &HiddenStates,
    span: &Span,
    width: usize,
    facts: &AtomicFactSet,
) -> Result<HssResult> {
    span.check_within(inst.num_response_tokens())?;
    let expanded = Span::from_indices(facts.expand(span.iter())?);
    hss_avg(inst, h, &expanded, width)
}

/// The union pipeline fed with hidden-state cosine similarity.
pub fn hss_union(
    inst: &TokenizedInstance,
    h: &HiddenStates,
    span: &Span,
    config: &EngineConfig,
) -> Result<EvidenceSet> {
    let s = hidden_cosine(h)?;
    attribute_span(inst, &s, span, config, None)
}

/// Every sentence touched by `span`, as one span.
pub fn sentence_closure(inst: &TokenizedInstance, span: &Span) -> Result<Span> {
    span.check_within(inst.num_response_tokens())?;
    let mut ranges = Vec::new();
    for i in span.iter() {
        let r = inst
            .sentence_of(i)
            .ok_or(Error::SpanOutOfRange {
                index: i,
                len: inst.num_response_tokens(),
            })?;
        if ranges.last() != Some(&r) {
            ranges.push(r);
        }
    }
    Ok(Span::from_ranges(ranges))
}

/// Attribution of the span's whole enclosing sentence(s).
pub fn sent_comp(engine: &AttributionEngine, span: &Span, tau: Tau) -> Result<EvidenceSet> {
    let full = sentence_closure(engine.instance(), span)?;
    let mut set = engine.attribute_span(&full, tau, None)?;
    set.span = span.clone();
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttnVariant {
    /// Any earlier response token may be picked.
    #[default]
    Full,
    /// Only earlier tokens of the same sentence.
    LocalSentence,
}

/// Augments each token with the top-k earlier response tokens it attends to.
#[derive(Debug)]
pub struct AttnAugmenter {
    response_similarity: Arc<SimilarityMatrix>,
    sentences: Vec<Range<usize>>,
    k: usize,
    variant: AttnVariant,
}

impl AttnAugmenter {
    pub fn new(
        inst: &TokenizedInstance,
        response_similarity: Arc<SimilarityMatrix>,
        k: usize,
        variant: AttnVariant,
    ) -> Result<Self> {
        if response_similarity.columns != ColumnSpace::Response {
            return Err(Error::InvalidArgument(
                "response augmentation needs a response-to-response matrix".into(),
            ));
        }
        response_similarity.check_against(inst)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(AttnAugmenter {
            response_similarity,
            sentences: inst.response_sentences.clone(),
            k,
            variant,
        })
    }

    /// Earlier tokens picked for `token`, ascending.
    pub fn picked(&self, token: usize) -> Vec<usize> {
        let lo = match self.variant {
            AttnVariant::Full => 0,
            AttnVariant::LocalSentence => self
                .sentences
                .iter()
                .find(|r| r.contains(&token))
                .map_or(token, |r| r.start),
        };
        let row = self.response_similarity.row(token);
        let candidates = &row[lo..token];
        let Some(threshold) = crate::attribution::kth_largest(candidates, self.k) else {
            return Vec::new();
        };
        candidates
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold && v > 0.0)
            .map(|(j, _)| lo + j)
            .collect()
    }
}

impl Augmenter for AttnAugmenter {
    fn members(&self, token: usize) -> Result<Vec<usize>> {
        if token >= self.response_similarity.rows() {
            return Err(Error::SpanOutOfRange {
                index: token,
                len: self.response_similarity.rows(),
            });
        }
        let mut m = self.picked(token);
        m.push(token);
        Ok(m)
    }
}

/// Span evidence where each token also inherits the evidence of the earlier
/// response tokens it attends to; isolation filtering happens only at span
/// level.
pub fn augment_by_attn(engine: &AttributionEngine, aug: &AttnAugmenter, span: &Span, tau: Tau) -> Result<EvidenceSet> {
    engine.attribute_span(span, tau, Some(aug))
}
