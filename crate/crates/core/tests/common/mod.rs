#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use finegrain_core::interchange::{Provenance, SimilarityKind, SimilarityMatrix, TokenizedInstance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Splits `0..total` into `parts` non-empty consecutive ranges.
pub fn tiling(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, total - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::new();
    let mut lo = 0;
    for c in cuts.into_iter().chain([total]) {
        out.push(lo..c);
        lo = c;
    }
    out
}

/// Random small instance: n <= 20 response tokens, c + m <= 50 prompt
/// columns, documents at offset `o`.
pub fn small_instance(rng: &mut ChaCha8Rng, o: usize) -> TokenizedInstance {
    let c = rng.gen_range(1..=30);
    let m = rng.gen_range(o.max(1)..=(50 - c).max(o.max(1)));
    let n = rng.gen_range(1..=20);
    let p = rng.gen_range(1..=c.min(5));
    let passages = tiling(rng, c, p);
    let s = rng.gen_range(1..=n.min(4));
    let sentences = tiling(rng, n, s);
    TokenizedInstance {
        instance_id: "rand".into(),
        doc_tokens: (0..c).map(|j| format!(" d{j}")).collect(),
        passages,
        question_tokens: (0..m).map(|j| format!(" q{j}")).collect(),
        response_tokens: (0..n).map(|i| format!(" r{i}")).collect(),
        response_sentences: sentences,
        doc_offset: o,
        response_text: None,
        response_char_spans: None,
    }
}

/// Row values drawn from a coarse grid so that ties and zeros are common.
pub fn coarse_matrix(rng: &mut ChaCha8Rng, inst: &TokenizedInstance) -> SimilarityMatrix {
    let rows = inst.num_response_tokens();
    let cols = inst.prompt_len();
    let values = (0..rows * cols).map(|_| rng.gen_range(0..6) as f64 * 0.1).collect();
    SimilarityMatrix::new(rows, cols, values, provenance()).unwrap()
}

pub fn provenance() -> Provenance {
    Provenance {
        kind: SimilarityKind::AttentionAverage,
        layer: Some(15),
        heads_averaged: Some(1),
    }
}
