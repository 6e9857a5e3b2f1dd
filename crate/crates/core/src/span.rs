use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of response token indices, kept sorted and deduplicated.
///
/// Most spans are a single contiguous range, but dependency expansion can
/// produce gapped sets, so the general form is an index list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", from = "Vec<usize>")]
pub struct Span {
    indices: Vec<usize>,
}

impl Span {
    pub fn from_range(range: Range<usize>) -> Self {
        Span {
            indices: range.collect(),
        }
    }

    pub fn from_ranges<I: IntoIterator<Item = Range<usize>>>(ranges: I) -> Self {
        Self::from_indices(ranges.into_iter().flatten())
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Span { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn first(&self) -> Option<usize> {
        self.indices.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    /// The range `[first, last + 1)` when the span is contiguous.
    pub fn as_range(&self) -> Option<Range<usize>> {
        let (first, last) = (self.first()?, self.last()?);
        (last - first + 1 == self.len()).then_some(first..last + 1)
    }

    /// Maximal contiguous runs, in order.
    pub fn runs(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = Vec::new();
        for &i in &self.indices {
            match out.last_mut() {
                Some(r) if r.end == i => r.end = i + 1,
                _ => out.push(i..i + 1),
            }
        }
        out
    }

    pub fn union(&self, other: &Span) -> Span {
        Span::from_indices(self.iter().chain(other.iter()))
    }

    /// Fails on an empty span or one reaching past `n` response tokens.
    pub fn check_within(&self, n: usize) -> Result<()> {
        match self.last() {
            None => Err(Error::EmptySpan),
            Some(last) if last >= n => Err(Error::SpanOutOfRange { index: last, len: n }),
            Some(_) => Ok(()),
        }
    }
}

impl From<Vec<usize>> for Span {
    fn from(v: Vec<usize>) -> Self {
        Span::from_indices(v)
    }
}

impl From<Span> for Vec<usize> {
    fn from(s: Span) -> Self {
        s.indices
    }
}

impl From<Range<usize>> for Span {
    fn from(r: Range<usize>) -> Self {
        Span::from_range(r)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .runs()
            .into_iter()
            .map(|r| format!("{}..{}", r.start, r.end))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}
