use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TokenizedInstance;
use crate::error::{Error, Result};

/// Dependency parse of one response sentence. Word indices are local to the
/// sentence; `head[w] == None` marks the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceParse {
    /// Response tokens belonging to this sentence.
    pub token_range: Range<usize>,
    pub words: Vec<String>,
    pub word_char_spans: Vec<Range<usize>>,
    pub head: Vec<Option<usize>>,
    pub label: Vec<String>,
    pub pos: Vec<String>,
    pub is_punct: Vec<bool>,
}

impl SentenceParse {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.head.iter().position(Option::is_none)
    }

    /// Children of every word, each list in increasing index order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        children_of(&self.head)
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let n = self.words.len();
        let lens = [
            ("word_char_spans", self.word_char_spans.len()),
            ("head", self.head.len()),
            ("label", self.label.len()),
            ("pos", self.pos.len()),
            ("is_punct", self.is_punct.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::Validation(format!(
                    "sentence {idx}: {name} has {len} entries for {n} words"
                )));
            }
        }
        let mut prev_end = 0;
        for (w, s) in self.word_char_spans.iter().enumerate() {
            if s.start >= s.end || (w > 0 && s.start < prev_end) {
                return Err(Error::Validation(format!(
                    "sentence {idx}: word {w} char span [{}, {}) is empty, unsorted or overlapping",
                    s.start, s.end
                )));
            }
            prev_end = s.end;
        }
        if n > 0 {
            check_tree(&self.head).map_err(|m| Error::Validation(format!("sentence {idx}: {m}")))?;
        }
        Ok(())
    }
}

pub(crate) fn children_of(head: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); head.len()];
    for (w, h) in head.iter().enumerate() {
        if let Some(h) = *h {
            children[h].push(w);
        }
    }
    children
}

/// A head array is a tree when exactly one word is the root, every head is
/// in range, and following heads from any word reaches the root.
pub(crate) fn check_tree(head: &[Option<usize>]) -> Result<(), String> {
    let n = head.len();
    let roots = head.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    if let Some(w) = head.iter().position(|h| matches!(h, Some(p) if *p >= n)) {
        return Err(format!("word {w} has out-of-range head {:?}", head[w]));
    }
    // 0 = unvisited, 1 = on current chain, 2 = known to reach the root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut chain = Vec::new();
        let mut w = start;
        loop {
            match state[w] {
                2 => break,
                1 => return Err(format!("cycle through word {w}")),
                _ => {}
            }
            state[w] = 1;
            chain.push(w);
            match head[w] {
                Some(p) => w = p,
                None => break,
            }
        }
        for c in chain {
            state[c] = 2;
        }
    }
    Ok(())
}

/// Dependency parses for the sentences of one response, plus the character
/// offsets that align parser words with model tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DepParse {
    pub instance_id: String,
    pub response_text: String,
    pub token_char_spans: Vec<Range<usize>>,
    pub sentences: Vec<SentenceParse>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceFile {
    token_range: [usize; 2],
    words: Vec<String>,
    word_char_spans: Vec<[usize; 2]>,
    /// `-1` for the root.
    head: Vec<i64>,
    label: Vec<String>,
    pos: Vec<String>,
    is_punct: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepParseFile {
    instance_id: String,
    response_text: String,
    token_char_spans: Vec<[usize; 2]>,
    sentences: Vec<SentenceFile>,
}

impl DepParse {
    /// Index of the parsed sentence holding response token `i`.
    pub fn sentence_index_of(&self, i: usize) -> Option<usize> {
        self.sentences.iter().position(|s| s.token_range.contains(&i))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.token_char_spans.len();
        for (i, s) in self.token_char_spans.iter().enumerate() {
            if s.start > s.end || s.end > self.response_text.len() {
                return Err(Error::Validation(format!(
                    "token {i} char span [{}, {}) outside the {}-byte response text",
                    s.start,
                    s.end,
                    self.response_text.len()
                )));
            }
        }
        let mut prev_end = 0;
        for (idx, sent) in self.sentences.iter().enumerate() {
            let r = &sent.token_range;
            if r.start < prev_end || r.start > r.end || r.end > n {
                return Err(Error::Validation(format!(
                    "sentence {idx}: token range [{}, {}) is unsorted or outside {n} tokens",
                    r.start, r.end
                )));
            }
            prev_end = r.end;
            sent.validate(idx)?;
        }
        Ok(())
    }

    /// Every parsed sentence must be one of the instance's sentences, and the
    /// token alignment must cover all response tokens.
    pub fn check_against(&self, inst: &TokenizedInstance) -> Result<()> {
        if self.token_char_spans.len() != inst.num_response_tokens() {
            return Err(Error::Shape {
                what: "token_char_spans".into(),
                expected: inst.num_response_tokens().to_string(),
                found: self.token_char_spans.len().to_string(),
            });
        }
        for (idx, sent) in self.sentences.iter().enumerate() {
            if !inst.response_sentences.contains(&sent.token_range) {
                return Err(Error::Validation(format!(
                    "parsed sentence {idx} token range [{}, {}) is not a sentence of instance {}",
                    sent.token_range.start, sent.token_range.end, inst.instance_id
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: DepParseFile =
            serde_json::from_str(text).map_err(|e| Error::schema(path, e.to_string()))?;
        let mut sentences = Vec::with_capacity(file.sentences.len());
        for (idx, s) in file.sentences.into_iter().enumerate() {
            let head = s
                .head
                .iter()
                .enumerate()
                .map(|(w, &h)| match h {
                    -1 => Ok(None),
                    h if h >= 0 => Ok(Some(h as usize)),
                    h => Err(Error::schema(
                        path,
                        format!("sentences[{idx}].head[{w}] = {h}; use -1 for the root"),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            sentences.push(SentenceParse {
                token_range: s.token_range[0]..s.token_range[1],
                words: s.words,
                word_char_spans: s.word_char_spans.iter().map(|[a, b]| *a..*b).collect(),
                head,
                label: s.label,
                pos: s.pos,
                is_punct: s.is_punct,
            });
        }
        let parse = DepParse {
            instance_id: file.instance_id,
            response_text: file.response_text,
            token_char_spans: file.token_char_spans.iter().map(|[a, b]| *a..*b).collect(),
            sentences,
        };
        parse.validate()?;
        Ok(parse)
    }

    pub fn to_json(&self) -> String {
        let file = DepParseFile {
            instance_id: self.instance_id.clone(),
            response_text: self.response_text.clone(),
            token_char_spans: self.token_char_spans.iter().map(|r| [r.start, r.end]).collect(),
            sentences: self
                .sentences
                .iter()
                .map(|s| SentenceFile {
                    token_range: [s.token_range.start, s.token_range.end],
                    words: s.words.clone(),
                    word_char_spans: s.word_char_spans.iter().map(|r| [r.start, r.end]).collect(),
                    head: s.head.iter().map(|h| h.map_or(-1, |p| p as i64)).collect(),
                    label: s.label.clone(),
                    pos: s.pos.clone(),
                    is_punct: s.is_punct.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("parse serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_depparse(path: &Path) -> Result<DepParse> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DepParse::from_json(&text, path)
}
