//! Hand-authored and generated fixtures.
//!
//! `fig1` is a small two-passage instance about a company's yearly earnings
//! whose response sentence carries two parallel coordinations. `synthetic`
//! produces seeded random instances of any size for fuzzing, evaluation and
//! latency runs.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{
    save_hidden, save_similarity, ColumnSpace, DepParse, DropEntry, DropTable,
    HiddenStates, Provenance, SentenceParse, SimilarityKind, SimilarityMatrix, TokenizedInstance,
};

/// A span with its gold passage, as stored in `spans.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub instance_id: String,
    /// Half-open response token range.
    pub span: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
}

/// All files of one instance directory, in memory.
#[derive(Debug, Clone)]
pub struct FixtureParts {
    pub instance: TokenizedInstance,
    pub attention: SimilarityMatrix,
    /// Extra per-layer attention, written as `attn_L<layer>.f32`.
    pub layers: Vec<(usize, SimilarityMatrix)>,
    pub hidden: Option<HiddenStates>,
    pub response_attention: Option<SimilarityMatrix>,
    pub parse: Option<DepParse>,
}

impl FixtureParts {
    /// Writes `instance.json`, `attn.f32`, and whichever optional files exist
    /// into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let o = Some(self.instance.doc_offset);
        self.instance.save(&dir.join("instance.json"))?;
        save_similarity(&dir.join("attn.f32"), &self.attention, o)?;
        for (layer, m) in &self.layers {
            save_similarity(&dir.join(format!("attn_L{layer}.f32")), m, o)?;
        }
        if let Some(h) = &self.hidden {
            save_hidden(&dir.join("hidden.f32"), h, o)?;
        }
        if let Some(r) = &self.response_attention {
            save_similarity(&dir.join("attn_resp.f32"), r, o)?;
        }
        if let Some(p) = &self.parse {
            p.save(&dir.join("depparse.json"))?;
        }
        Ok(())
    }
}

pub fn write_records(path: &Path, records: &[SpanRecord]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(records).expect("records serialize");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<SpanRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn write_drops(path: &Path, table: &DropTable) -> Result<()> {
    std::fs::write(path, table.to_json()).map_err(|e| Error::io(path, e))
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Concatenates `tokens` and returns each token's character span with any
/// leading whitespace trimmed off.
pub fn detokenize(tokens: &[String]) -> (String, Vec<Range<usize>>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(tokens.len());
    for t in tokens {
        let lead = t.len() - t.trim_start().len();
        let start = text.len() + lead;
        text.push_str(t);
        spans.push(start..text.len());
    }
    (text, spans)
}

/// Locates each word of `words` in `text` in order, starting at `from`.
fn word_spans(text: &str, words: &[String], from: usize) -> Vec<Range<usize>> {
    let mut cursor = from;
    words
        .iter()
        .map(|w| {
            let start = cursor + text[cursor..].find(w.as_str()).expect("word occurs in text");
            cursor = start + w.len();
            start..cursor
        })
        .collect()
}

pub const FIG1_ID: &str = "fig1";

/// Response token range of "one million dollars" in [`fig1`].
pub const FIG1_TARGET: Range<usize> = 4..7;

/// Response token index of "one" in [`fig1`].
pub const FIG1_ONE: usize = 4;

/// The two-passage earnings example.
///
/// Passage 1 states the earnings; passage 0 is a distractor. The attention
/// rows put the mass of "million dollars" on the "$1,0000,00" tokens of
/// passage 1, while "one" itself looks at the question and at the first
/// document token (an attention sink), so only augmentation recovers its
/// evidence.
pub fn fig1() -> FixtureParts {
    let passage0 = [
        "Acme", " Corp", " was", " founded", " in", " 1990", " by", " two", " engineers", ".",
    ];
    let passage1 = [
        "The", " company", " earned", " $", "1", ",", "0000", ",", "00", " in", " 2012", " and",
        " $", "2", ",", "000", ",", "000", " in", " 2013", ".",
    ];
    let question = ["How", " much", " did", " the", " company", " earn", "?"];
    let response = [
        "The", " company", " earn", "ed", " one", " million", " dollars", " and", " two",
        " million", " dollars", " in", " 2012", " and", " 2013", ",", " respect", "ively", ".",
    ];
    let doc_tokens: Vec<String> = strings(&passage0).into_iter().chain(strings(&passage1)).collect();
    let response_tokens = strings(&response);
    let (text, token_spans) = detokenize(&response_tokens);
    let n = response_tokens.len();
    let instance = TokenizedInstance {
        instance_id: FIG1_ID.into(),
        passages: vec![0..passage0.len(), passage0.len()..doc_tokens.len()],
        doc_tokens,
        question_tokens: strings(&question),
        response_tokens,
        response_sentences: vec![0..n],
        doc_offset: 0,
        response_text: Some(text.clone()),
        response_char_spans: Some(token_spans.clone()),
    };
    instance.validate().expect("fig1 instance is valid");

    // prompt columns: passage 0 = 0..10, passage 1 = 10..31, question = 31..38
    let peaks: [&[(usize, f64)]; 19] = [
        &[(10, 0.5), (0, 0.3)],
        &[(11, 0.6), (35, 0.3)],
        &[(12, 0.5), (36, 0.4)],
        &[(12, 0.4), (0, 0.3)],
        &[(32, 0.45), (0, 0.35), (14, 0.1)],
        &[(14, 0.4), (16, 0.35)],
        &[(13, 0.45), (18, 0.3)],
        &[(21, 0.5), (0, 0.3)],
        &[(32, 0.4), (23, 0.3)],
        &[(25, 0.4), (27, 0.3)],
        &[(22, 0.4), (7, 0.35)],
        &[(19, 0.5), (4, 0.3)],
        &[(20, 0.6), (5, 0.3)],
        &[(21, 0.5), (0, 0.3)],
        &[(29, 0.6), (28, 0.2)],
        &[(0, 0.6), (37, 0.3)],
        &[(0, 0.5), (36, 0.2)],
        &[(0, 0.5), (30, 0.2)],
        &[(0, 0.7), (37, 0.2)],
    ];
    let cols = instance.prompt_len();
    let rows: Vec<Vec<f64>> = peaks
        .iter()
        .map(|p| {
            let mut row = vec![0.0; cols];
            for &(j, w) in *p {
                row[j] = w;
            }
            row
        })
        .collect();
    let attention = SimilarityMatrix::from_rows(
        &rows,
        Provenance {
            kind: SimilarityKind::AttentionAverage,
            layer: Some(15),
            heads_averaged: Some(28),
        },
    )
    .expect("fig1 attention is finite")
    .round_to_f32();

    // Hidden states: each prompt row is its own axis, each response row its
    // attention row, plus a little seeded noise.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = cols;
    let prompt: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..dim).map(|d| if d == j { 1.0 } else { 0.0 } + rng.gen_range(0.0..0.05)).collect())
        .collect();
    let resp_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|x| x + rng.gen_range(0.0..0.05)).collect())
        .collect();
    let hidden = HiddenStates::from_rows(Some(14), &prompt, &resp_rows).expect("fig1 hidden states").round_to_f32();

    // Response self-attention: each token mostly looks at its predecessor;
    // "2012" looks back at "one", "2013" at "two".
    let mut resp = vec![vec![0.0; n]; n];
    for (i, row) in resp.iter_mut().enumerate().skip(1) {
        row[i - 1] = 0.3;
        row[0] = 0.1;
    }
    resp[12][4] = 0.5;
    resp[14][8] = 0.5;
    resp[10][8] = 0.4;
    let response_attention = SimilarityMatrix::from_rows(
        &resp,
        Provenance {
            kind: SimilarityKind::AttentionAverage,
            layer: Some(15),
            heads_averaged: Some(28),
        },
    )
    .expect("finite")
    .round_to_f32()
    .with_columns(ColumnSpace::Response);

    FixtureParts {
        parse: Some(fig1_parse(&instance, &text, &token_spans)),
        instance,
        attention,
        layers: Vec::new(),
        hidden: Some(hidden),
        response_attention: Some(response_attention),
    }
}

fn fig1_parse(inst: &TokenizedInstance, text: &str, token_spans: &[Range<usize>]) -> DepParse {
    // (word, head, label, pos); head -1 is the root
    let table: [(&str, i64, &str, &str); 17] = [
        ("The", 1, "det", "DT"),
        ("company", 2, "nsubj", "NN"),
        ("earned", -1, "root", "VBD"),
        ("one", 4, "compound", "CD"),
        ("million", 5, "nummod", "CD"),
        ("dollars", 2, "obj", "NNS"),
        ("and", 9, "cc", "CC"),
        ("two", 8, "compound", "CD"),
        ("million", 9, "nummod", "CD"),
        ("dollars", 5, "conj", "NNS"),
        ("in", 11, "case", "IN"),
        ("2012", 2, "obl", "CD"),
        ("and", 13, "cc", "CC"),
        ("2013", 11, "conj", "CD"),
        (",", 2, "punct", ","),
        ("respectively", 2, "advmod", "RB"),
        (".", 2, "punct", "."),
    ];
    let words: Vec<String> = table.iter().map(|t| t.0.to_string()).collect();
    let parse = DepParse {
        instance_id: inst.instance_id.clone(),
        response_text: text.to_string(),
        token_char_spans: token_spans.to_vec(),
        sentences: vec![SentenceParse {
            token_range: 0..inst.num_response_tokens(),
            word_char_spans: word_spans(text, &words, 0),
            words,
            head: table.iter().map(|t| (t.1 >= 0).then_some(t.1 as usize)).collect(),
            label: table.iter().map(|t| t.2.to_string()).collect(),
            pos: table.iter().map(|t| t.3.to_string()).collect(),
            is_punct: table.iter().map(|t| t.2 == "punct").collect(),
        }],
    };
    parse.validate().expect("fig1 parse is valid");
    parse
}

/// Records for the fig1 instance. "The company earn" is labelled with the
/// passage that introduces the company, so attention methods get 3 of 4.
pub fn fig1_records() -> Vec<SpanRecord> {
    [([4, 7], 1), ([0, 4], 0), ([11, 13], 1), ([8, 11], 1)]
        .into_iter()
        .map(|(span, gold)| SpanRecord {
            instance_id: FIG1_ID.into(),
            span,
            gold: Some(gold),
        })
        .collect()
}

pub fn fig1_drops() -> DropTable {
    DropTable {
        entries: vec![
            DropEntry {
                instance_id: FIG1_ID.into(),
                span: [4, 7],
                log_p_full: -1.2,
                log_p_ablated: vec![-1.3, -4.0],
            },
            DropEntry {
                instance_id: FIG1_ID.into(),
                span: [0, 4],
                log_p_full: -0.8,
                log_p_ablated: vec![-0.9, -2.1],
            },
        ],
    }
}

/// Shape of a generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub passages: usize,
    pub passage_len: usize,
    pub question_len: usize,
    /// Template tokens placed before the documents in the prompt.
    pub doc_offset: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub dim: usize,
    /// Layers of attention to emit; the first is the default `attn` matrix.
    pub layers: Vec<usize>,
    pub spans_per_sentence: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            passages: 4,
            passage_len: 40,
            question_len: 8,
            doc_offset: 0,
            sentences: 3,
            sentence_len: 10,
            dim: 16,
            layers: vec![15],
            spans_per_sentence: 2,
        }
    }
}

/// A generated instance with its gold-labelled spans and drop table entries.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub parts: FixtureParts,
    pub records: Vec<SpanRecord>,
    pub drops: Vec<DropEntry>,
}

/// Random dependency tree over `n` words: heads, labels, POS and punctuation.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> (Vec<Option<usize>>, Vec<String>, Vec<String>, Vec<bool>) {
    const LABELS: [&str; 9] = ["nsubj", "obj", "conj", "conj", "amod", "cc", "nmod", "advmod", "punct"];
    const POS: [&str; 9] = ["VB", "VBD", "NN", "NNS", "JJ", "CD", "IN", "DT", "CC"];
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut head = vec![None; n];
    for pos in 1..n {
        let parent = order[rng.gen_range(0..pos)];
        head[order[pos]] = Some(parent);
    }
    let mut label = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut punct = Vec::with_capacity(n);
    for h in &head {
        let l = if h.is_none() { "root" } else { LABELS[rng.gen_range(0..LABELS.len())] };
        label.push(l.to_string());
        punct.push(l == "punct");
        tags.push(if l == "punct" { ",".to_string() } else { POS[rng.gen_range(0..POS.len())].to_string() });
    }
    (head, label, tags, punct)
}

/// Seeded random instance. Every response sentence is about one gold
/// passage: its attention rows peak on neighbouring tokens of that passage,
/// and its hidden states share that passage's topic vector.
pub fn synthetic(id: &str, cfg: &SyntheticConfig, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.passages * cfg.passage_len;
    let o = cfg.doc_offset;
    let doc_tokens: Vec<String> = (0..c).map(|j| format!(" d{j}")).collect();
    let question_tokens: Vec<String> = (0..o)
        .map(|j| format!("<t{j}>"))
        .chain((0..cfg.question_len).map(|j| format!(" q{j}")))
        .collect();
    let n = cfg.sentences * cfg.sentence_len;
    let response_tokens: Vec<String> = (0..n)
        .map(|i| if (i + 1) % cfg.sentence_len == 0 { ".".to_string() } else { format!(" r{i}") })
        .collect();
    let (text, token_spans) = detokenize(&response_tokens);
    let instance = TokenizedInstance {
        instance_id: id.to_string(),
        doc_tokens,
        passages: (0..cfg.passages).map(|p| p * cfg.passage_len..(p + 1) * cfg.passage_len).collect(),
        question_tokens,
        response_tokens,
        response_sentences: (0..cfg.sentences).map(|s| s * cfg.sentence_len..(s + 1) * cfg.sentence_len).collect(),
        doc_offset: o,
        response_text: Some(text.clone()),
        response_char_spans: Some(token_spans.clone()),
    };
    instance.validate().expect("synthetic instance is valid");

    let gold: Vec<usize> = (0..cfg.sentences).map(|_| rng.gen_range(0..cfg.passages)).collect();
    let anchors: Vec<usize> = gold
        .iter()
        .map(|&g| g * cfg.passage_len + rng.gen_range(0..cfg.passage_len))
        .collect();
    let cols = instance.prompt_len();
    let q_cols: Vec<usize> = (0..cols).filter(|j| !(o..o + c).contains(j)).collect();

    let make_attention = |rng: &mut ChaCha8Rng, layer: usize| {
        let mut values = Vec::with_capacity(n * cols);
        for i in 0..n {
            let s = i / cfg.sentence_len;
            let lo = gold[s] * cfg.passage_len;
            let hi = lo + cfg.passage_len;
            let mut row: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.0..0.005)).collect();
            if rng.gen_bool(0.5) {
                row[o] += 0.15;
            }
            let shift = rng.gen_range(0..5) as i64 - 2;
            let center = (anchors[s] as i64 + shift).clamp(lo as i64, hi as i64 - 1) as usize;
            row[o + center] += rng.gen_range(0.3..0.6);
            for nb in [center.wrapping_sub(1), center + 1] {
                if (lo..hi).contains(&nb) {
                    row[o + nb] += rng.gen_range(0.1..0.3);
                }
            }
            if !q_cols.is_empty() && rng.gen_bool(0.2) {
                row[q_cols[rng.gen_range(0..q_cols.len())]] += rng.gen_range(0.3..0.7);
            }
            values.extend(row);
        }
        SimilarityMatrix::new(
            n,
            cols,
            values,
            Provenance {
                kind: SimilarityKind::AttentionAverage,
                layer: Some(layer),
                heads_averaged: Some(8),
            },
        )
        .expect("finite")
        .round_to_f32()
    };
    let default_layer = cfg.layers.first().copied().unwrap_or(15);
    let attention = make_attention(&mut rng, default_layer);
    let layers: Vec<(usize, SimilarityMatrix)> = cfg
        .layers
        .iter()
        .skip(1)
        .map(|&l| (l, make_attention(&mut rng, l)))
        .collect();

    let topics: Vec<Vec<f64>> = (0..cfg.passages)
        .map(|_| (0..cfg.dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let noisy = |rng: &mut ChaCha8Rng, base: &[f64], scale: f64| -> Vec<f64> {
        base.iter().map(|b| b + rng.gen_range(-scale..scale)).collect()
    };
    let zero = vec![0.0; cfg.dim];
    let prompt: Vec<Vec<f64>> = (0..cols)
        .map(|j| match instance.passage_of(j.wrapping_sub(o)).filter(|_| j >= o) {
            Some(p) => noisy(&mut rng, &topics[p], 0.6),
            None => noisy(&mut rng, &zero, 1.0),
        })
        .collect();
    let response_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| noisy(&mut rng, &topics[gold[i / cfg.sentence_len]], 0.6))
        .collect();
    let hidden = HiddenStates::from_rows(Some(default_layer - 1), &prompt, &response_rows).expect("finite").round_to_f32();

    let mut resp_values = vec![0.0; n * n];
    for i in 1..n {
        for j in 0..i {
            resp_values[i * n + j] = rng.gen_range(0.0..0.05);
        }
        resp_values[i * n + i - 1] += 0.3;
    }
    let response_attention = SimilarityMatrix::new(
        n,
        n,
        resp_values,
        Provenance {
            kind: SimilarityKind::AttentionAverage,
            layer: Some(default_layer),
            heads_averaged: Some(8),
        },
    )
    .expect("finite")
    .round_to_f32()
    .with_columns(ColumnSpace::Response);

    let sentences = instance
        .response_sentences
        .iter()
        .map(|r| {
            let len = r.len();
            let (mut head, mut label, mut pos, mut punct) = random_tree(&mut rng, len.saturating_sub(1).max(1));
            if len > 1 {
                let root = head.iter().position(Option::is_none).expect("root");
                head.push(Some(root));
                label.push("punct".into());
                pos.push(".".into());
                punct.push(true);
            }
            let words: Vec<String> = r.clone().map(|t| instance.response_tokens[t].trim().to_string()).collect();
            SentenceParse {
                token_range: r.clone(),
                word_char_spans: word_spans(&text, &words, token_spans[r.start].start),
                words,
                head,
                label,
                pos,
                is_punct: punct,
            }
        })
        .collect();
    let parse = DepParse {
        instance_id: id.to_string(),
        response_text: text,
        token_char_spans: token_spans,
        sentences,
    };
    parse.validate().expect("synthetic parse is valid");

    let mut records = Vec::new();
    let mut drops = Vec::new();
    for (s, r) in instance.response_sentences.iter().enumerate() {
        for _ in 0..cfg.spans_per_sentence {
            let len = rng.gen_range(1..=3.min(r.len()));
            let start = rng.gen_range(r.start..=r.end - len);
            let span = [start, start + len];
            records.push(SpanRecord {
                instance_id: id.to_string(),
                span,
                gold: Some(gold[s]),
            });
            let full = -rng.gen_range(0.5..3.0);
            let ablated = (0..cfg.passages)
                .map(|p| {
                    let d = if p == gold[s] { rng.gen_range(1.0..3.0) } else { rng.gen_range(0.0..0.8) };
                    full - d
                })
                .collect();
            drops.push(DropEntry {
                instance_id: id.to_string(),
                span,
                log_p_full: full,
                log_p_ablated: ablated,
            });
        }
    }

    Synthetic {
        parts: FixtureParts {
            instance,
            attention,
            layers,
            hidden: Some(hidden),
            response_attention: Some(response_attention),
            parse: Some(parse),
        },
        records,
        drops,
    }
}

/// Writes the fixture suite: `fig1` plus `count` synthetic instances, with
/// `spans.json` and `drops.json` at the root.
pub fn generate_suite(root: &Path, count: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    fig1().write(&root.join(FIG1_ID))?;
    let mut records = fig1_records();
    let mut drops = fig1_drops();
    let cfg = SyntheticConfig {
        layers: vec![15, 14, 16],
        ..SyntheticConfig::default()
    };
    for i in 0..count {
        let id = format!("syn{i:03}");
        let syn = synthetic(&id, &cfg, seed.wrapping_add(i as u64));
        syn.parts.write(&root.join(&id))?;
        records.extend(syn.records);
        drops.entries.extend(syn.drops);
    }
    write_records(&root.join("spans.json"), &records)?;
    write_drops(&root.join("drops.json"), &drops)
}
