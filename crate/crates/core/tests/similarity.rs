mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use finegrain_core::interchange::{AttentionStack, HiddenStates, SimilarityKind};
use finegrain_core::similarity::{attention_average, hidden_cosine, LayerSelector, SimilarityConfig};
use finegrain_core::Error;

fn random_heads(rng: &mut impl Rng, h: usize, size: usize) -> Vec<Vec<f64>> {
    (0..h)
        .map(|_| (0..size).map(|_| rng.gen_range(0.0f32..1.0) as f64).collect())
        .collect()
}

#[test]
fn single_head_is_returned_as_is() {
    let head = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let stack = AttentionStack::new(Some(3), 2, 3, vec![head.clone()]).unwrap();
    let s = attention_average(&stack);
    assert_eq!(s.values(), &head[..]);
    assert_eq!(s.provenance.layer, Some(3));
    assert_eq!(s.provenance.heads_averaged, Some(1));
}

#[test]
fn two_heads_average() {
    let stack = AttentionStack::new(None, 1, 2, vec![vec![0.2, 0.8], vec![0.4, 0.6]]).unwrap();
    let s = attention_average(&stack);
    assert!((s.get(0, 0) - 0.3).abs() < 1e-12);
    assert!((s.get(0, 1) - 0.7).abs() < 1e-12);
}

#[test]
fn eight_heads_match_per_cell_mean() {
    let mut rng = common::rng(11);
    for _ in 0..20 {
        let heads = random_heads(&mut rng, 8, 5 * 12);
        let stack = AttentionStack::new(Some(15), 5, 12, heads.clone()).unwrap();
        let s = attention_average(&stack);
        assert_eq!(s.provenance.heads_averaged, Some(8));
        for i in 0..5 {
            for j in 0..12 {
                let mut total = 0.0;
                for h in &heads {
                    total += h[i * 12 + j];
                }
                let want = total / 8.0;
                let got = s.get(i, j);
                assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-12), "({i},{j}) {got} vs {want}");
            }
        }
    }
}

#[test]
fn negative_attention_is_rejected() {
    assert!(AttentionStack::new(None, 1, 2, vec![vec![0.2, -0.1]]).is_err());
    assert!(AttentionStack::new(None, 1, 2, vec![]).is_err());
}

#[test]
fn cosine_of_identical_and_orthogonal_rows() {
    let h = HiddenStates::from_rows(None, &[vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]], &[vec![1.0, 2.0, 0.0]]).unwrap();
    let s = hidden_cosine(&h).unwrap();
    assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
    assert_eq!(s.get(0, 1), 0.0);
    assert_eq!(s.provenance.kind, SimilarityKind::HiddenCosine);
}

#[test]
fn cosine_matches_naive_oracle() {
    let mut rng = common::rng(12);
    for _ in 0..50 {
        let prompt: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let response: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let s = hidden_cosine(&HiddenStates::from_rows(None, &prompt, &response).unwrap()).unwrap();
        for (i, r) in response.iter().enumerate() {
            for (j, p) in prompt.iter().enumerate() {
                let dot = r[0] * p[0] + r[1] * p[1] + r[2] * p[2];
                let nr = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!((s.get(i, j) - dot / (nr * np)).abs() < 1e-6);
                assert!((-1.0..=1.0).contains(&s.get(i, j)));
            }
        }
    }
}

#[test]
fn zero_rows_are_named() {
    let h = HiddenStates::from_rows(None, &[vec![1.0, 0.0], vec![0.0, 0.0]], &[vec![1.0, 1.0]]).unwrap();
    match hidden_cosine(&h) {
        Err(Error::ZeroNorm { which: "prompt", row: 1 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    let h = HiddenStates::from_rows(None, &[vec![1.0, 0.0]], &[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
    match hidden_cosine(&h) {
        Err(Error::ZeroNorm { which: "response", row: 1 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn layer_rules() {
    let attn = SimilarityConfig { kind: SimilarityKind::AttentionAverage, layer: LayerSelector::Middle };
    let hid = SimilarityConfig { kind: SimilarityKind::HiddenCosine, layer: LayerSelector::Middle };
    assert_eq!(attn.resolve_layer(28).unwrap(), 15);
    assert_eq!(attn.resolve_layer(32).unwrap(), 17);
    assert_eq!(hid.resolve_layer(28).unwrap(), 14);
    assert_eq!(hid.resolve_layer(32).unwrap(), 16);
    let explicit = SimilarityConfig { kind: SimilarityKind::AttentionAverage, layer: LayerSelector::Explicit(33) };
    assert!(explicit.resolve_layer(32).is_err());
    let zero = SimilarityConfig { kind: SimilarityKind::AttentionAverage, layer: LayerSelector::Explicit(0) };
    assert!(zero.resolve_layer(32).is_err());
}

proptest! {
    #[test]
    fn head_order_does_not_matter(seed in any::<u64>(), h in 1usize..9) {
        let mut rng = common::rng(seed);
        let mut heads = random_heads(&mut rng, h, 3 * 7);
        let a = attention_average(&AttentionStack::new(None, 3, 7, heads.clone()).unwrap());
        heads.shuffle(&mut rng);
        let b = attention_average(&AttentionStack::new(None, 3, 7, heads).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_ignores_row_scaling(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let dim = rng.gen_range(1..6);
        let row = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            v[0] += 2.0;
            v
        };
        let prompt: Vec<Vec<f64>> = (0..rng.gen_range(1..8)).map(|_| row(&mut rng)).collect();
        let response: Vec<Vec<f64>> = (0..rng.gen_range(1..8)).map(|_| row(&mut rng)).collect();
        let h = HiddenStates::from_rows(None, &prompt, &response).unwrap();
        let pf: Vec<f64> = prompt.iter().map(|_| rng.gen_range(0.01..100.0)).collect();
        let rf: Vec<f64> = response.iter().map(|_| rng.gen_range(0.01..100.0)).collect();
        let a = hidden_cosine(&h).unwrap();
        let b = hidden_cosine(&h.rescaled(&pf, &rf)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }
}
