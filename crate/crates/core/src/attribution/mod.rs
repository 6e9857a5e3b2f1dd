//! Token-wise top-k attribution, union aggregation over a span, removal of
//! isolated evidence tokens, and passage-level rollups.

mod engine;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::interchange::{SimilarityMatrix, TokenizedInstance};
use crate::span::Span;

pub use engine::{attribute_span, AttributionEngine, Augmenter};

/// Sparse evidence: document token index -> positive score.
pub type EvidenceMap = BTreeMap<usize, f64>;

/// Isolation window. `Infinite` disables the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tau {
    Finite(usize),
    Infinite,
}

impl fmt::Display for Tau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tau::Finite(t) => write!(f, "{t}"),
            Tau::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Tau {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Tau::Infinite),
            other => other
                .parse::<usize>()
                .map(Tau::Finite)
                .map_err(|_| Error::InvalidArgument(format!("tau must be a positive integer or `inf`, got `{other}`"))),
        }
    }
}

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tau::Finite(t) => s.serialize_u64(*t as u64),
            Tau::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(Tau::Finite(n as usize)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Token-wise evidence size.
    pub k: usize,
    /// Isolation threshold.
    pub tau: Tau,
    /// Passages scoring strictly above this are cited.
    pub citation_threshold: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: 2,
            tau: Tau::Finite(2),
            citation_threshold: 0.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.tau == Tau::Finite(0) {
            return Err(Error::InvalidArgument("tau must be at least 1 or `inf`".into()));
        }
        if !self.citation_threshold.is_finite() {
            return Err(Error::InvalidArgument("citation threshold must be finite".into()));
        }
        Ok(())
    }
}

/// The `k`-th largest value of `row` (the smallest value when `k >= len`).
pub(crate) fn kth_largest(row: &[f64], k: usize) -> Option<f64> {
    if row.is_empty() {
        return None;
    }
    let mut scratch = row.to_vec();
    let idx = k.min(row.len()) - 1;
    let (_, kth, _) = scratch.select_nth_unstable_by(idx, |a, b| b.total_cmp(a));
    Some(*kth)
}

/// Top-k selection over a full score row restricted to `doc_cols`.
///
/// Every column tying the k-th largest value is kept, so the result can hold
/// more than `k` entries. Only strictly positive scores become evidence. Keys
/// are document-local (`column - doc_cols.start`).
pub fn select_row(row: &[f64], doc_cols: Range<usize>, k: usize) -> EvidenceMap {
    let Some(threshold) = kth_largest(row, k) else {
        return EvidenceMap::new();
    };
    row[doc_cols]
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold && v > 0.0)
        .map(|(j, &v)| (j, v))
        .collect()
}

/// Evidence of response token `i` against the documents of `inst`.
pub fn token_attribution(
    s: &SimilarityMatrix,
    i: usize,
    inst: &TokenizedInstance,
    k: usize,
) -> Result<EvidenceMap> {
    let n = inst.num_response_tokens();
    if i >= n {
        return Err(Error::SpanOutOfRange { index: i, len: n });
    }
    s.check_against(inst)?;
    Ok(select_row(s.row(i), inst.doc_columns(), k))
}

/// Exact union of supports with scores summed, folding maps in the given order.
pub fn union_maps<'a, I>(maps: I) -> EvidenceMap
where
    I: IntoIterator<Item = &'a EvidenceMap>,
{
    let mut out = EvidenceMap::new();
    for m in maps {
        for (&j, &w) in m {
            *out.entry(j).or_insert(0.0) += w;
        }
    }
    out
}

/// Drops every evidence token with no other evidence token within `tau`.
pub fn remove_isolated(evidence: &EvidenceMap, tau: Tau) -> EvidenceMap {
    let Tau::Finite(tau) = tau else {
        return evidence.clone();
    };
    let keys: Vec<usize> = evidence.keys().copied().collect();
    keys.iter()
        .enumerate()
        .filter(|&(pos, &j)| {
            let left = pos > 0 && j - keys[pos - 1] <= tau;
            let right = pos + 1 < keys.len() && keys[pos + 1] - j <= tau;
            left || right
        })
        .map(|(_, &j)| (j, evidence[&j]))
        .collect()
}

/// Aggregated evidence for one target span.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSet {
    pub span: Span,
    pub evidence: EvidenceMap,
    pub passage_scores: Vec<f64>,
}

impl EvidenceSet {
    /// Wraps `evidence` and rolls its scores up per passage of `inst`.
    pub fn new(span: Span, evidence: EvidenceMap, inst: &TokenizedInstance) -> Self {
        let mut passage_scores = vec![0.0; inst.num_passages()];
        for (&j, &w) in &evidence {
            if let Some(p) = inst.passage_of(j) {
                passage_scores[p] += w;
            }
        }
        EvidenceSet {
            span,
            evidence,
            passage_scores,
        }
    }

    pub fn total_score(&self) -> f64 {
        self.evidence.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.evidence.is_empty()
    }

    /// Passage with the highest cumulative score; lowest index on ties,
    /// `None` when there is no evidence.
    pub fn predict_passage(&self) -> Option<usize> {
        if self.evidence.is_empty() {
            return None;
        }
        argmax_lowest(&self.passage_scores)
    }

    /// Passages scoring strictly above `threshold`, ascending.
    pub fn cite_passages(&self, threshold: f64) -> Vec<usize> {
        cite_scores(&self.passage_scores, threshold)
    }
}

/// `aggregate_union` for a span given each span token's map, in span order.
pub fn aggregate_union(
    maps: &[EvidenceMap],
    span: &Span,
    inst: &TokenizedInstance,
) -> Result<EvidenceSet> {
    if span.is_empty() {
        return Err(Error::EmptySpan);
    }
    if maps.len() != span.len() {
        return Err(Error::InvalidArgument(format!(
            "{} token maps for a span of {} tokens",
            maps.len(),
            span.len()
        )));
    }
    Ok(EvidenceSet::new(span.clone(), union_maps(maps), inst))
}

/// Index of the maximum; the lowest index wins ties. `None` for an empty slice.
pub fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn cite_scores(scores: &[f64], threshold: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect()
}
