//! Building the response-to-prompt similarity matrix from model internals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{AttentionStack, HiddenStates, Provenance, SimilarityKind, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelector {
    /// 1-based layer index.
    Explicit(usize),
    /// `floor(L/2) + 1` for attention, `floor(L/2)` for hidden states.
    Middle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    pub layer: LayerSelector,
}

impl SimilarityConfig {
    /// Resolves the layer for a model with `depth` layers.
    pub fn resolve_layer(&self, depth: usize) -> Result<usize> {
        let layer = match (self.layer, self.kind) {
            (LayerSelector::Explicit(l), _) => l,
            (LayerSelector::Middle, SimilarityKind::HiddenCosine) => depth / 2,
            (LayerSelector::Middle, _) => depth / 2 + 1,
        };
        if layer == 0 || layer > depth {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} outside [1, {depth}]"
            )));
        }
        Ok(layer)
    }
}

/// Element-wise mean over the heads of one layer, accumulated in f64.
pub fn attention_average(stack: &AttentionStack) -> SimilarityMatrix {
    let heads = stack.num_heads();
    let size = stack.rows() * stack.cols();
    let mut acc = vec![0.0f64; size];
    for h in 0..heads {
        for (a, v) in acc.iter_mut().zip(stack.head(h)) {
            *a += v;
        }
    }
    let inv = 1.0 / heads as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    SimilarityMatrix::new(
        stack.rows(),
        stack.cols(),
        acc,
        Provenance {
            kind: SimilarityKind::AttentionAverage,
            layer: stack.layer,
            heads_averaged: Some(heads),
        },
    )
    .expect("mean of finite heads is finite")
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity between every response row and every prompt row.
pub fn hidden_cosine(h: &HiddenStates) -> Result<SimilarityMatrix> {
    let prompt_norms = (0..h.num_prompt())
        .map(|j| nonzero_norm(h.prompt_row(j), "prompt", j))
        .collect::<Result<Vec<_>>>()?;
    let response_norms = (0..h.num_response())
        .map(|i| nonzero_norm(h.response_row(i), "response", i))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(h.num_response() * h.num_prompt());
    for (i, rn) in response_norms.iter().enumerate() {
        let r = h.response_row(i);
        for (j, pn) in prompt_norms.iter().enumerate() {
            let dot: f64 = r.iter().zip(h.prompt_row(j)).map(|(a, b)| a * b).sum();
            values.push((dot / (rn * pn)).clamp(-1.0, 1.0));
        }
    }
    SimilarityMatrix::new(
        h.num_response(),
        h.num_prompt(),
        values,
        Provenance {
            kind: SimilarityKind::HiddenCosine,
            layer: h.layer,
            heads_averaged: None,
        },
    )
}

fn nonzero_norm(v: &[f64], which: &'static str, row: usize) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm { which, row });
    }
    Ok(n)
}
