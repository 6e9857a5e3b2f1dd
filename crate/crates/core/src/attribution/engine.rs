use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use super::{remove_isolated, select_row, union_maps, EngineConfig, EvidenceMap, EvidenceSet, Tau};
use crate::error::{Error, Result};
use crate::interchange::{SimilarityMatrix, TokenizedInstance};
use crate::span::Span;

/// Supplies, for a response token, the set of response tokens whose
/// evidence is summed into its own (the token itself included).
pub trait Augmenter: Send + Sync {
    fn members(&self, token: usize) -> Result<Vec<usize>>;
}

/// Per-response attribution state for one `(instance, similarity, k)` triple.
///
/// Token maps are computed on first use and then shared by every span of the
/// response. Each slot is filled at most once, even under concurrent callers.
#[derive(Debug)]
pub struct AttributionEngine {
    instance: Arc<TokenizedInstance>,
    similarity: Arc<SimilarityMatrix>,
    k: usize,
    token_maps: Vec<OnceLock<EvidenceMap>>,
    row_scans: AtomicUsize,
}

impl AttributionEngine {
    pub fn new(
        instance: Arc<TokenizedInstance>,
        similarity: Arc<SimilarityMatrix>,
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        similarity.check_against(&instance)?;
        let n = instance.num_response_tokens();
        Ok(AttributionEngine {
            instance,
            similarity,
            k,
            token_maps: (0..n).map(|_| OnceLock::new()).collect(),
            row_scans: AtomicUsize::new(0),
        })
    }

    pub fn instance(&self) -> &TokenizedInstance {
        &self.instance
    }

    pub fn similarity(&self) -> &SimilarityMatrix {
        &self.similarity
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// How many similarity rows have been scanned so far.
    pub fn row_scans(&self) -> usize {
        self.row_scans.load(Ordering::Relaxed)
    }

    /// Unfiltered evidence of response token `i`.
    pub fn token_map(&self, i: usize) -> &EvidenceMap {
        self.token_maps[i].get_or_init(|| {
            self.row_scans.fetch_add(1, Ordering::Relaxed);
            select_row(self.similarity.row(i), self.instance.doc_columns(), self.k)
        })
    }

    /// Token `i`'s map after summing in the maps of its augmentation members.
    pub fn augmented_map(&self, i: usize, augmenter: &dyn Augmenter) -> Result<EvidenceMap> {
        let members = augmenter.members(i)?;
        let n = self.instance.num_response_tokens();
        if let Some(&bad) = members.iter().find(|&&a| a >= n) {
            return Err(Error::SpanOutOfRange { index: bad, len: n });
        }
        Ok(union_maps(members.iter().map(|&a| self.token_map(a))))
    }

    /// Evidence for `span` before isolation filtering.
    pub fn span_evidence(&self, span: &Span, augmenter: Option<&dyn Augmenter>) -> Result<EvidenceMap> {
        span.check_within(self.instance.num_response_tokens())?;
        match augmenter {
            None => Ok(union_maps(span.iter().map(|i| self.token_map(i)))),
            Some(aug) => {
                let maps = span
                    .iter()
                    .map(|i| self.augmented_map(i, aug))
                    .collect::<Result<Vec<_>>>()?;
                Ok(union_maps(&maps))
            }
        }
    }

    pub fn attribute_span(
        &self,
        span: &Span,
        tau: Tau,
        augmenter: Option<&dyn Augmenter>,
    ) -> Result<EvidenceSet> {
        let raw = self.span_evidence(span, augmenter)?;
        let kept = remove_isolated(&raw, tau);
        Ok(EvidenceSet::new(span.clone(), kept, &self.instance))
    }
}

/// One-shot attribution without a warm cache.
pub fn attribute_span(
    instance: &TokenizedInstance,
    similarity: &SimilarityMatrix,
    span: &Span,
    config: &EngineConfig,
    augmenter: Option<&dyn Augmenter>,
) -> Result<EvidenceSet> {
    config.validate()?;
    let engine = AttributionEngine::new(
        Arc::new(instance.clone()),
        Arc::new(similarity.clone()),
        config.k,
    )?;
    engine.attribute_span(span, config.tau, augmenter)
}
