mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use finegrain_core::attribution::{attribute_span, AttributionEngine, EngineConfig, Tau};
use finegrain_core::baselines::{
    augment_by_attn, hss_avg, hss_avg_dep, hss_union, sent_comp, sentence_closure, window_passage, window_scores,
    AttnAugmenter, AttnVariant,
};
use finegrain_core::depaug::{AtomicFactSet, VerbTags};
use finegrain_core::fixtures::{fig1, FIG1_TARGET};
use finegrain_core::interchange::{ColumnSpace, HiddenStates, SimilarityMatrix, TokenizedInstance};
use finegrain_core::similarity::hidden_cosine;
use finegrain_core::{Error, Span};

fn random_hidden(rng: &mut impl Rng, inst: &TokenizedInstance, dim: usize) -> HiddenStates {
    let mut row = || -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let prompt: Vec<Vec<f64>> = (0..inst.prompt_len()).map(|_| row()).collect();
    let response: Vec<Vec<f64>> = (0..inst.num_response_tokens()).map(|_| row()).collect();
    HiddenStates::from_rows(None, &prompt, &response).unwrap()
}

/// Scores every window from scratch and keeps the first strict maximum.
fn window_oracle(inst: &TokenizedInstance, h: &HiddenStates, span: &Span, w: usize) -> (usize, f64) {
    let dim = h.dim();
    let mean = |rows: Vec<&[f64]>| -> Vec<f64> {
        (0..dim).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64).collect()
    };
    let s = mean(span.iter().map(|i| h.response_row(i)).collect());
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = (0..dim).map(|d| a[d] * b[d]).sum();
        let na: f64 = (0..dim).map(|d| a[d] * a[d]).sum::<f64>().sqrt();
        let nb: f64 = (0..dim).map(|d| b[d] * b[d]).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let c = inst.num_doc_tokens();
    let mut best = (0, f64::NEG_INFINITY);
    for start in 0..=c - w {
        let m = mean((start..start + w).map(|j| h.prompt_row(inst.doc_offset + j)).collect());
        let score = cos(&s, &m);
        if score > best.1 {
            best = (start, score);
        }
    }
    best
}

#[test]
fn exhaustive_window_oracle() {
    let mut rng = common::rng(31);
    let mut cases = 0;
    for w in [1, 4, 8] {
        for _ in 0..80 {
            let o = rng.gen_range(0..3);
            let mut inst = common::small_instance(&mut rng, o);
            if inst.num_doc_tokens() < w {
                inst.doc_tokens = (0..w).map(|j| format!("d{j}")).collect();
                inst.passages = vec![0..w];
            }
            inst.validate().unwrap();
            let dim = rng.gen_range(1..8);
            let h = random_hidden(&mut rng, &inst, dim);
            let n = inst.num_response_tokens();
            let a = rng.gen_range(0..n);
            let span = Span::from_range(a..rng.gen_range(a + 1..=n));
            let got = hss_avg(&inst, &h, &span, w).unwrap();
            let (start, score) = window_oracle(&inst, &h, &span, w);
            assert_eq!(got.window.start, start);
            assert_eq!(got.window.width, w);
            assert!((got.window.score - score).abs() < 1e-6);
            assert_eq!(got.passage, window_passage(&inst, start..start + w));
            assert_eq!(window_scores(&inst, &h, &span, w).unwrap().len(), inst.num_doc_tokens() - w + 1);
            cases += 1;
        }
    }
    assert!(cases >= 200);
}

#[test]
fn thirty_tokens_width_eight_has_23_windows() {
    let mut rng = common::rng(30);
    let inst = TokenizedInstance {
        instance_id: "w".into(),
        doc_tokens: (0..30).map(|j| format!("d{j}")).collect(),
        passages: vec![0..10, 10..30],
        question_tokens: vec!["q".into()],
        response_tokens: (0..5).map(|i| format!("r{i}")).collect(),
        response_sentences: vec![0..5],
        doc_offset: 0,
        response_text: None,
        response_char_spans: None,
    };
    let h = random_hidden(&mut rng, &inst, 6);
    let span = Span::from_range(1..4);
    assert_eq!(window_scores(&inst, &h, &span, 8).unwrap().len(), 23);
    assert_eq!(hss_avg(&inst, &h, &span, 8).unwrap().window.start, window_oracle(&inst, &h, &span, 8).0);
}

#[test]
fn identical_window_wins_with_cosine_one() {
    let f = fig1();
    let inst = f.instance;
    let dim = 4;
    let mut prompt: Vec<Vec<f64>> = (0..inst.prompt_len())
        .map(|j| vec![1.0, (j % 3) as f64, 0.5, -(j as f64)])
        .collect();
    for row in prompt.iter_mut().skip(20).take(2) {
        *row = vec![0.0, 0.0, 1.0, 0.0];
    }
    let response: Vec<Vec<f64>> = (0..inst.num_response_tokens()).map(|_| vec![0.0, 0.0, 2.0, 0.0]).collect();
    let h = HiddenStates::from_rows(None, &prompt, &response).unwrap();
    assert_eq!(h.dim(), dim);
    let r = hss_avg(&inst, &h, &Span::from_range(0..3), 2).unwrap();
    assert_eq!(r.window.start, 20);
    assert!((r.window.score - 1.0).abs() < 1e-12);
    assert_eq!(r.passage, 1);
}

#[test]
fn full_width_window_is_the_only_one() {
    let f = fig1();
    let h = f.hidden.unwrap();
    let c = f.instance.num_doc_tokens();
    let r = hss_avg(&f.instance, &h, &Span::from_range(4..7), c).unwrap();
    assert_eq!(r.window.start, 0);
    assert_eq!(r.passage, window_passage(&f.instance, 0..c));
    assert!(hss_avg(&f.instance, &h, &Span::from_range(4..7), c + 1).is_err());
    assert!(hss_avg(&f.instance, &h, &Span::from_range(4..7), 0).is_err());
}

#[test]
fn straddling_windows_take_the_majority_passage() {
    let f = fig1();
    // passage 0 is 0..10
    assert_eq!(window_passage(&f.instance, 7..15), 1);
    assert_eq!(window_passage(&f.instance, 4..12), 0);
    assert_eq!(window_passage(&f.instance, 6..14), 0);
    assert_eq!(window_passage(&f.instance, 8..10), 0);
}

#[test]
fn zero_span_mean_is_an_error() {
    let f = fig1();
    let inst = f.instance;
    let prompt: Vec<Vec<f64>> = (0..inst.prompt_len()).map(|_| vec![1.0, 1.0]).collect();
    let mut response: Vec<Vec<f64>> = (0..inst.num_response_tokens()).map(|_| vec![1.0, 0.0]).collect();
    response[1] = vec![-1.0, 0.0];
    let h = HiddenStates::from_rows(None, &prompt, &response).unwrap();
    assert!(matches!(hss_avg(&inst, &h, &Span::from_range(0..2), 4), Err(Error::ZeroNorm { .. })));
}

#[test]
fn dep_expansion_composes() {
    let f = fig1();
    let h = f.hidden.unwrap();
    let facts = AtomicFactSet::new(Arc::new(f.parse.unwrap()), VerbTags::default());
    let span = Span::from_range(FIG1_TARGET);
    let expanded = Span::from_indices(facts.expand(span.iter()).unwrap());
    assert!(expanded.contains(2) && expanded.contains(12) && !expanded.contains(14));
    for w in [1, 4, 8] {
        assert_eq!(
            hss_avg_dep(&f.instance, &h, &span, w, &facts).unwrap(),
            hss_avg(&f.instance, &h, &expanded, w).unwrap()
        );
    }
}

#[test]
fn singleton_facts_change_nothing() {
    let f = fig1();
    let h = f.hidden.unwrap();
    let mut parse = f.parse.unwrap();
    parse.sentences[0].pos = vec!["NN".into(); 17];
    let facts = AtomicFactSet::new(Arc::new(parse), VerbTags::default());
    let span = Span::from_range(4..7);
    assert_eq!(
        hss_avg_dep(&f.instance, &h, &span, 8, &facts).unwrap(),
        hss_avg(&f.instance, &h, &span, 8).unwrap()
    );
}

#[test]
fn hss_union_is_attribution_over_cosine() {
    let f = fig1();
    let h = f.hidden.unwrap();
    let s = hidden_cosine(&h).unwrap();
    let cfg = EngineConfig::default();
    for span in [Span::from_range(4..7), Span::from_range(0..19), Span::from_indices([3, 9])] {
        assert_eq!(
            hss_union(&f.instance, &h, &span, &cfg).unwrap(),
            attribute_span(&f.instance, &s, &span, &cfg, None).unwrap()
        );
    }
}

fn two_sentence_engine() -> AttributionEngine {
    let mut f = fig1();
    f.instance.response_sentences = vec![0..8, 8..19];
    f.instance.validate().unwrap();
    AttributionEngine::new(Arc::new(f.instance), Arc::new(f.attention), 2).unwrap()
}

#[test]
fn sentence_closure_follows_boundaries() {
    let engine = two_sentence_engine();
    let inst = engine.instance();
    let table = [(0..8), (8..19)];
    for i in 0..19 {
        let want = table.iter().find(|r| r.contains(&i)).unwrap().clone();
        assert_eq!(sentence_closure(inst, &Span::from_indices([i])).unwrap(), Span::from_range(want));
    }
    assert_eq!(sentence_closure(inst, &Span::from_indices([7, 8])).unwrap(), Span::from_range(0..19));
}

#[test]
fn sent_comp_is_idempotent_on_sentences() {
    let engine = two_sentence_engine();
    for span in [Span::from_range(2..4), Span::from_indices([9]), Span::from_indices([1, 12])] {
        let closure = sentence_closure(engine.instance(), &span).unwrap();
        let a = sent_comp(&engine, &span, Tau::Finite(2)).unwrap();
        let b = sent_comp(&engine, &closure, Tau::Finite(2)).unwrap();
        assert_eq!(a.evidence, b.evidence);
        let direct = engine.attribute_span(&closure, Tau::Finite(2), None).unwrap();
        assert_eq!(b, direct);
    }
}

fn four_token_case() -> (TokenizedInstance, SimilarityMatrix, SimilarityMatrix) {
    let inst = TokenizedInstance {
        instance_id: "four".into(),
        doc_tokens: (0..8).map(|j| format!("d{j}")).collect(),
        passages: vec![0..4, 4..8],
        question_tokens: vec!["q".into()],
        response_tokens: (0..4).map(|i| format!("r{i}")).collect(),
        response_sentences: vec![0..2, 2..4],
        doc_offset: 0,
        response_text: None,
        response_char_spans: None,
    };
    let mut rows = vec![vec![0.0; 9]; 4];
    rows[0][0] = 0.5;
    rows[1][5] = 0.6;
    rows[1][6] = 0.3;
    rows[2][2] = 0.4;
    rows[3][4] = 0.7;
    rows[3][8] = 0.9;
    let s = SimilarityMatrix::from_rows(&rows, common::provenance()).unwrap();
    let mut resp = vec![vec![0.0; 4]; 4];
    resp[1][0] = 0.2;
    resp[2][1] = 0.5;
    resp[3][1] = 0.8;
    resp[3][2] = 0.1;
    let r = SimilarityMatrix::from_rows(&resp, common::provenance()).unwrap().with_columns(ColumnSpace::Response);
    (inst, s, r)
}

#[test]
fn token_three_inherits_token_one() {
    let (inst, s, r) = four_token_case();
    let engine = AttributionEngine::new(Arc::new(inst.clone()), Arc::new(s), 1).unwrap();
    let aug = AttnAugmenter::new(&inst, Arc::new(r.clone()), 1, AttnVariant::Full).unwrap();
    assert_eq!(aug.picked(3), vec![1]);
    assert!(aug.picked(0).is_empty());
    // k = 1: token 3 keeps only the question column, token 1 brings column 5
    assert!(engine.token_map(3).is_empty());
    let ev = augment_by_attn(&engine, &aug, &Span::from_indices([3]), Tau::Infinite).unwrap();
    assert_eq!(ev.evidence, BTreeMap::from([(5, 0.6)]));
    let ev0 = augment_by_attn(&engine, &aug, &Span::from_indices([0]), Tau::Infinite).unwrap();
    assert_eq!(&ev0.evidence, engine.token_map(0));

    let local = AttnAugmenter::new(&inst, Arc::new(r), 1, AttnVariant::LocalSentence).unwrap();
    assert_eq!(local.picked(3), vec![2]);
    assert!(local.picked(2).is_empty());
}

#[test]
fn isolation_filter_applies_at_span_level() {
    let (inst, s, r) = four_token_case();
    let engine = AttributionEngine::new(Arc::new(inst.clone()), Arc::new(s), 2).unwrap();
    let aug = AttnAugmenter::new(&inst, Arc::new(r), 1, AttnVariant::Full).unwrap();
    let span = Span::from_indices([3]);
    let raw = engine.span_evidence(&span, Some(&aug)).unwrap();
    let filtered = augment_by_attn(&engine, &aug, &span, Tau::Finite(1)).unwrap();
    assert_eq!(raw.keys().copied().collect::<Vec<_>>(), vec![4, 5, 6]);
    assert_eq!(filtered.evidence, raw);
    let tight = augment_by_attn(&engine, &aug, &Span::from_indices([1]), Tau::Finite(1)).unwrap();
    assert_eq!(tight.evidence.keys().copied().collect::<Vec<_>>(), vec![5, 6]);
}

#[test]
fn prompt_matrix_is_not_a_response_matrix() {
    let (inst, s, _) = four_token_case();
    assert!(AttnAugmenter::new(&inst, Arc::new(s), 2, AttnVariant::Full).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn best_window_ignores_global_scale(seed in any::<u64>(), factor in 0.001f64..1000.0, w in prop::sample::select(vec![1usize, 4, 8])) {
        let mut rng = common::rng(seed);
        let mut inst = common::small_instance(&mut rng, 0);
        if inst.num_doc_tokens() < w {
            inst.doc_tokens = (0..w).map(|j| format!("d{j}")).collect();
            inst.passages = vec![0..w];
        }
        let h = random_hidden(&mut rng, &inst, 5);
        let p = vec![factor; inst.prompt_len()];
        let r = vec![factor; inst.num_response_tokens()];
        let span = Span::from_indices([0]);
        let a = hss_avg(&inst, &h, &span, w).unwrap();
        let b = hss_avg(&inst, &h.rescaled(&p, &r), &span, w).unwrap();
        prop_assert_eq!(a.window.start, b.window.start);
        prop_assert!((a.window.score - b.window.score).abs() < 1e-6);
    }

    #[test]
    fn local_variant_stays_in_the_sentence(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = common::rng(seed);
        let inst = common::small_instance(&mut rng, 0);
        let n = inst.num_response_tokens();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if j < i { rng.gen_range(0..4) as f64 * 0.25 } else { 0.0 }).collect())
            .collect();
        let r = Arc::new(SimilarityMatrix::from_rows(&rows, common::provenance()).unwrap().with_columns(ColumnSpace::Response));
        let local = AttnAugmenter::new(&inst, r.clone(), k, AttnVariant::LocalSentence).unwrap();
        let full = AttnAugmenter::new(&inst, r, k, AttnVariant::Full).unwrap();
        for i in 0..n {
            let sentence = inst.sentence_of(i).unwrap();
            for j in local.picked(i) {
                prop_assert!(sentence.contains(&j) && j < i);
            }
            prop_assert!(full.picked(i).iter().all(|&j| j < i && rows[i][j] > 0.0));
        }
    }
}
