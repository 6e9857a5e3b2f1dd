mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use finegrain_core::depaug::{
    atomic_fact_elements, augment_map, closest_verb_ancestor, collect_successors, find_coordinations,
    prune_coordinations, reform_tree, token_to_words, tree_path, words_to_tokens, AtomicFactSet, Coordination,
    VerbTags,
};
use finegrain_core::fixtures::{fig1, random_tree, synthetic, SyntheticConfig, FIG1_ONE};
use finegrain_core::interchange::{DepParse, SentenceParse};
use finegrain_core::Error;

fn fig1_parse() -> DepParse {
    fig1().parse.unwrap()
}

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

// Response tokens of fig1:
//  0 The  1 company  2 earn  3 ed  4 one  5 million  6 dollars  7 and  8 two
//  9 million  10 dollars  11 in  12 2012  13 and  14 2013  15 ,  16 respect
//  17 ively  18 .

#[test]
fn one_keeps_its_own_constituents() {
    let a = atomic_fact_elements(&fig1_parse(), FIG1_ONE, &VerbTags::default()).unwrap();
    // The company earned one million dollars in 2012 respectively
    assert_eq!(a, set(&[0, 1, 2, 3, 4, 5, 6, 11, 12, 16, 17]));
    for excluded in [8, 9, 10, 14, 15, 18] {
        assert!(!a.contains(&excluded), "token {excluded} must be pruned");
    }
}

#[test]
fn two_keeps_the_second_constituents() {
    let a = atomic_fact_elements(&fig1_parse(), 8, &VerbTags::default()).unwrap();
    // "in" hangs under "2012", so it goes with it
    assert_eq!(a, set(&[0, 1, 2, 3, 7, 8, 9, 10, 13, 14, 16, 17]));
}

#[test]
fn fig1_prune_masks() {
    let parse = fig1_parse();
    let sent = &parse.sentences[0];
    let coords = find_coordinations(&sent.head, &sent.label);
    assert_eq!(
        coords,
        vec![Coordination { members: vec![5, 9] }, Coordination { members: vec![11, 13] }]
    );
    let reformed = reform_tree(&sent.head, &coords).unwrap();
    let earned = closest_verb_ancestor(sent, 3, &VerbTags::default()).unwrap();
    assert_eq!(sent.words[earned], "earned");

    let path_one = tree_path(&reformed, earned, 3).unwrap();
    assert_eq!(path_one, vec![2, 5, 4, 3]);
    let removed = prune_coordinations(sent.len(), &path_one, &coords);
    let gone: Vec<usize> = (0..sent.len()).filter(|&w| removed[w]).collect();
    assert_eq!(gone, vec![9, 13]);

    let path_two = tree_path(&reformed, earned, 7).unwrap();
    let removed = prune_coordinations(sent.len(), &path_two, &coords);
    let gone: Vec<usize> = (0..sent.len()).filter(|&w| removed[w]).collect();
    assert_eq!(gone, vec![5, 11]);
}

#[test]
fn group_without_parallel_stays_whole() {
    let coords = vec![Coordination { members: vec![1, 3] }, Coordination { members: vec![5, 6, 8] }];
    let removed = prune_coordinations(10, &[0, 1], &coords);
    let gone: Vec<usize> = (0..10).filter(|&w| removed[w]).collect();
    assert_eq!(gone, vec![3]);
}

#[test]
fn parallel_group_to_the_right_is_used() {
    let coords = vec![Coordination { members: vec![1, 2] }, Coordination { members: vec![5, 7] }];
    let removed = prune_coordinations(9, &[4, 7], &coords);
    let gone: Vec<usize> = (0..9).filter(|&w| removed[w]).collect();
    assert_eq!(gone, vec![1, 5]);
}

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn reform_keeps_a_child_before_the_first_constituent() {
    // ate red apples and pears
    let head = vec![None, Some(2), Some(0), Some(4), Some(2)];
    let label = labels(&["root", "amod", "obj", "cc", "conj"]);
    let coords = find_coordinations(&head, &label);
    assert_eq!(coords, vec![Coordination { members: vec![2, 4] }]);
    let reformed = reform_tree(&head, &coords).unwrap();
    assert_eq!(reformed, vec![None, Some(2), Some(0), Some(4), Some(0)]);
}

#[test]
fn reform_moves_a_child_after_the_first_constituent() {
    // bought apples and pears from Spain
    let head = vec![None, Some(0), Some(3), Some(1), Some(5), Some(1)];
    let label = labels(&["root", "obj", "cc", "conj", "case", "nmod"]);
    let coords = find_coordinations(&head, &label);
    assert_eq!(coords, vec![Coordination { members: vec![1, 3] }]);
    let reformed = reform_tree(&head, &coords).unwrap();
    assert_eq!(reformed, vec![None, Some(0), Some(3), Some(0), Some(5), Some(0)]);
}

#[test]
fn reform_without_coordinations_is_identity() {
    let head = vec![None, Some(0), Some(1)];
    assert!(find_coordinations(&head, &labels(&["root", "obj", "amod"])).is_empty());
    assert_eq!(reform_tree(&head, &[]).unwrap(), head);
}

#[test]
fn and_between_dollars_forms_one_group() {
    // dollars and dollars
    let head = vec![None, Some(2), Some(0)];
    let coords = find_coordinations(&head, &labels(&["root", "cc", "conj"]));
    assert_eq!(coords, vec![Coordination { members: vec![0, 2] }]);
}

/// Line-for-line rendering of the reference listing: candidate leaders skip
/// words already grouped, members are later words headed by the leader with
/// the same label or `conj`, groups are kept when larger than one.
fn reference_find_coordinations(dep_head: &[Option<usize>], dep_label: &[String]) -> Vec<Vec<usize>> {
    let get_head = |k: usize| dep_head[k];
    let mut coordinations = Vec::new();
    let mut in_coordination_words = HashSet::new();
    for j in 0..dep_head.len().saturating_sub(1) {
        if in_coordination_words.contains(&j) {
            continue;
        }
        let mut new_coordination = vec![j];
        for k in j + 1..dep_head.len() {
            let case1 = get_head(k) == Some(j) && dep_label[k] == dep_label[j];
            let case2 = get_head(k) == Some(j) && dep_label[k] == "conj";
            if case1 || case2 {
                new_coordination.push(k);
            }
        }
        if new_coordination.len() > 1 {
            new_coordination.sort_unstable();
            in_coordination_words.extend(new_coordination.iter().copied());
            coordinations.push(new_coordination);
        }
    }
    coordinations
}

fn is_single_rooted_tree(head: &[Option<usize>]) -> bool {
    if head.iter().filter(|h| h.is_none()).count() != 1 {
        return false;
    }
    (0..head.len()).all(|start| {
        let mut cur = start;
        for _ in 0..=head.len() {
            match head[cur] {
                None => return true,
                Some(h) => cur = h,
            }
        }
        false
    })
}

#[test]
fn coordinations_match_reference_on_random_trees() {
    let mut rng = common::rng(2024);
    let mut nonempty = 0;
    for _ in 0..600 {
        let n = rng.gen_range(1..=18);
        let (head, label, _, _) = random_tree(&mut rng, n);
        let ours: Vec<Vec<usize>> = find_coordinations(&head, &label).into_iter().map(|c| c.members).collect();
        let reference = reference_find_coordinations(&head, &label);
        assert_eq!(ours, reference, "head {head:?} label {label:?}");
        if !ours.is_empty() {
            nonempty += 1;
        }
    }
    assert!(nonempty > 100, "fuzzing hit too few coordinations: {nonempty}");
}

#[test]
fn reformed_trees_stay_trees() {
    let mut rng = common::rng(99);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=24);
        let (head, label, _, _) = random_tree(&mut rng, n);
        let coords = find_coordinations(&head, &label);
        let reformed = reform_tree(&head, &coords).unwrap();
        assert!(is_single_rooted_tree(&reformed), "head {head:?} -> {reformed:?}");
    }
}

fn flat_sentence(words: &[String], spans: Vec<std::ops::Range<usize>>, tokens: std::ops::Range<usize>) -> SentenceParse {
    let n = words.len();
    SentenceParse {
        token_range: tokens,
        words: words.to_vec(),
        word_char_spans: spans,
        head: (0..n).map(|w| (w > 0).then_some(0)).collect(),
        label: (0..n).map(|w| if w == 0 { "root" } else { "dep" }.to_string()).collect(),
        pos: vec!["NN".to_string(); n],
        is_punct: vec![false; n],
    }
}

/// Words joined by single spaces, cut into tokens at random character
/// boundaries, so tokens may straddle words or hold only a space.
fn random_alignment(rng: &mut impl Rng) -> DepParse {
    let nw = rng.gen_range(1..=8);
    let words: Vec<String> = (0..nw)
        .map(|_| (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect())
        .collect();
    let text = words.join(" ");
    let mut word_spans = Vec::new();
    let mut at = 0;
    for w in &words {
        word_spans.push(at..at + w.len());
        at += w.len() + 1;
    }
    let mut cuts: BTreeSet<usize> = (0..rng.gen_range(0..text.len())).map(|_| rng.gen_range(1..text.len().max(2))).collect();
    cuts.retain(|&c| c < text.len());
    let mut token_spans = Vec::new();
    let mut lo = 0;
    for c in cuts.into_iter().chain([text.len()]) {
        token_spans.push(lo..c);
        lo = c;
    }
    let nt = token_spans.len();
    DepParse {
        instance_id: "align".into(),
        response_text: text,
        token_char_spans: token_spans,
        sentences: vec![flat_sentence(&words, word_spans, 0..nt)],
    }
}

fn char_owner(parse: &DepParse) -> BTreeMap<usize, usize> {
    let mut owner = BTreeMap::new();
    for (w, s) in parse.sentences[0].word_char_spans.iter().enumerate() {
        for ch in s.clone() {
            owner.insert(ch, w);
        }
    }
    owner
}

#[test]
fn alignment_matches_character_cover() {
    let mut rng = common::rng(5);
    for _ in 0..300 {
        let parse = random_alignment(&mut rng);
        parse.validate().unwrap();
        let owner = char_owner(&parse);
        for (t, span) in parse.token_char_spans.iter().enumerate() {
            let cover: BTreeSet<usize> = span.clone().filter_map(|ch| owner.get(&ch).copied()).collect();
            match token_to_words(&parse, t) {
                Ok((0, words)) => assert_eq!(words, cover),
                Ok((s, _)) => panic!("token {t} placed in sentence {s}"),
                Err(Error::Misaligned { .. }) => assert!(cover.is_empty()),
                Err(e) => panic!("{e}"),
            }
        }
        let nw = parse.sentences[0].len();
        let picked: BTreeSet<usize> = (0..nw).filter(|_| rng.gen_bool(0.4)).collect();
        let want: BTreeSet<usize> = parse
            .token_char_spans
            .iter()
            .enumerate()
            .filter(|(_, s)| (*s).clone().any(|ch| owner.get(&ch).is_some_and(|w| picked.contains(w))))
            .map(|(t, _)| t)
            .collect();
        assert_eq!(words_to_tokens(&parse, 0, &picked), want);
    }
}

#[test]
fn straddling_token_maps_to_both_words() {
    // "ab cd" cut as "ab", " c", "d"; plus "a" "b cd" style straddle
    let words = vec!["ab".to_string(), "cd".to_string()];
    let parse = DepParse {
        instance_id: "s".into(),
        response_text: "ab cd".into(),
        token_char_spans: vec![0..1, 1..4, 4..5],
        sentences: vec![flat_sentence(&words, vec![0..2, 3..5], 0..3)],
    };
    parse.validate().unwrap();
    assert_eq!(token_to_words(&parse, 1).unwrap().1, set(&[0, 1]));
    assert_eq!(token_to_words(&parse, 0).unwrap().1, set(&[0]));
    assert_eq!(words_to_tokens(&parse, 0, &set(&[1])), set(&[1, 2]));
    assert!(words_to_tokens(&parse, 0, &BTreeSet::new()).is_empty());
}

#[test]
fn subword_tokens_map_to_their_word() {
    let parse = fig1_parse();
    let earned = token_to_words(&parse, 2).unwrap().1;
    assert_eq!(earned, token_to_words(&parse, 3).unwrap().1);
    assert_eq!(words_to_tokens(&parse, 0, &earned), set(&[2, 3]));
}

#[test]
fn verb_is_its_own_ancestor() {
    let parse = fig1_parse();
    let sent = &parse.sentences[0];
    assert_eq!(closest_verb_ancestor(sent, 2, &VerbTags::default()), Some(2));
    let all: BTreeSet<usize> = (0..sent.len()).filter(|&w| !sent.is_punct[w]).collect();
    assert_eq!(collect_successors(sent, 2), all);
    // "earn": nothing on the path is coordinated, both groups stay whole
    let a = atomic_fact_elements(&parse, 2, &VerbTags::default()).unwrap();
    let want: BTreeSet<usize> = (0..19).filter(|t| ![15, 18].contains(t)).collect();
    assert_eq!(a, want);
}

#[test]
fn leaf_verb_collects_itself() {
    let parse = fig1_parse();
    let mut sent = parse.sentences[0].clone();
    sent.pos[15] = "VB".into();
    assert_eq!(collect_successors(&sent, 15), set(&[15]));
    assert_eq!(closest_verb_ancestor(&sent, 15, &VerbTags::default()), Some(15));
}

#[test]
fn verbless_sentence_falls_back_to_the_token() {
    let mut parse = fig1_parse();
    parse.sentences[0].pos = vec!["NN".into(); 17];
    for t in 0..19 {
        assert_eq!(atomic_fact_elements(&parse, t, &VerbTags::default()).unwrap(), set(&[t]));
    }
    assert_eq!(closest_verb_ancestor(&parse.sentences[0], 3, &VerbTags::default()), None);
}

#[test]
fn custom_verb_tags() {
    let parse = fig1_parse();
    let ud = VerbTags::new(["VERB"]);
    assert_eq!(atomic_fact_elements(&parse, FIG1_ONE, &ud).unwrap(), set(&[FIG1_ONE]));
}

#[test]
fn augment_map_sums_members() {
    let maps = vec![
        BTreeMap::from([(2, 0.5)]),
        BTreeMap::from([(2, 0.1), (4, 0.3)]),
        BTreeMap::new(),
    ];
    let out = augment_map(&maps, &set(&[0, 1, 2]));
    assert_eq!(out.len(), 2);
    assert!((out[&2] - 0.6).abs() < 1e-12);
    assert_eq!(out[&4], 0.3);
    assert_eq!(augment_map(&maps, &set(&[0])), maps[0]);
    assert_eq!(augment_map(&maps, &set(&[1, 2])), maps[1]);
}

#[test]
fn facts_are_identical_across_threads() {
    let syn = synthetic("t", &SyntheticConfig { sentences: 6, ..SyntheticConfig::default() }, 3);
    let parse = Arc::new(syn.parts.parse.unwrap());
    let n = parse.token_char_spans.len();
    let serial: Vec<BTreeSet<usize>> =
        (0..n).map(|t| atomic_fact_elements(&parse, t, &VerbTags::default()).unwrap()).collect();
    let shared = Arc::new(AtomicFactSet::new(parse, VerbTags::default()));
    std::thread::scope(|s| {
        for offset in 0..4 {
            let shared = shared.clone();
            let serial = &serial;
            s.spawn(move || {
                for t in (0..n).map(|t| (t + offset * 7) % n) {
                    let got: BTreeSet<usize> = shared.elements(t).unwrap().iter().copied().collect();
                    assert_eq!(got, serial[t]);
                }
            });
        }
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn facts_contain_the_token_and_stay_in_its_sentence(seed in any::<u64>(), len in 2usize..14) {
        let cfg = SyntheticConfig { sentences: 3, sentence_len: len, passages: 2, passage_len: 8, ..SyntheticConfig::default() };
        let syn = synthetic("p", &cfg, seed);
        let inst = syn.parts.instance;
        let parse = syn.parts.parse.unwrap();
        for t in 0..inst.num_response_tokens() {
            let a = atomic_fact_elements(&parse, t, &VerbTags::default()).unwrap();
            prop_assert!(a.contains(&t));
            let sentence = inst.sentence_of(t).unwrap();
            prop_assert!(a.iter().all(|x| sentence.contains(x)));
        }
    }
}
