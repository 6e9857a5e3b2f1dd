use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk form of `instance.json`. Field order here is the canonical order
/// used when saving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    instance_id: String,
    doc_tokens: Vec<String>,
    passages: Vec<[usize; 2]>,
    question_tokens: Vec<String>,
    response_tokens: Vec<String>,
    response_sentences: Vec<[usize; 2]>,
    #[serde(default)]
    doc_offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response_char_spans: Option<Vec<[usize; 2]>>,
}

/// A RAG instance: documents, question and response token streams plus the
/// boundaries the engine needs. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedInstance {
    pub instance_id: String,
    pub doc_tokens: Vec<String>,
    pub passages: Vec<Range<usize>>,
    pub question_tokens: Vec<String>,
    pub response_tokens: Vec<String>,
    pub response_sentences: Vec<Range<usize>>,
    /// Prompt column where document tokens start.
    pub doc_offset: usize,
    /// Detokenized response, used to resolve character-range spans.
    pub response_text: Option<String>,
    /// Character span of every response token inside `response_text`.
    pub response_char_spans: Option<Vec<Range<usize>>>,
}

fn to_ranges(v: &[[usize; 2]]) -> Vec<Range<usize>> {
    v.iter().map(|[s, e]| *s..*e).collect()
}

fn to_pairs(v: &[Range<usize>]) -> Vec<[usize; 2]> {
    v.iter().map(|r| [r.start, r.end]).collect()
}

/// Checks that `ranges` are nonempty, sorted, disjoint and tile `[0, len)`.
fn check_tiling(what: &str, ranges: &[Range<usize>], len: usize) -> Result<()> {
    let mut cursor = 0;
    for (idx, r) in ranges.iter().enumerate() {
        if r.start > r.end {
            return Err(Error::Validation(format!(
                "{what} {idx} is reversed: [{}, {})",
                r.start, r.end
            )));
        }
        if r.start < cursor {
            return Err(Error::Validation(format!(
                "{what} {idx} [{}, {}) overlaps the previous one ending at {cursor}",
                r.start, r.end
            )));
        }
        if r.start > cursor {
            return Err(Error::Validation(format!(
                "{what} {idx} [{}, {}) leaves a gap [{cursor}, {})",
                r.start, r.end, r.start
            )));
        }
        cursor = r.end;
    }
    if cursor != len {
        return Err(Error::Validation(format!(
            "{what}s cover [0, {cursor}) but the stream has length {len}"
        )));
    }
    Ok(())
}

impl TokenizedInstance {
    /// Number of document tokens, `c`.
    pub fn num_doc_tokens(&self) -> usize {
        self.doc_tokens.len()
    }

    /// Number of question tokens, `m`.
    pub fn num_question_tokens(&self) -> usize {
        self.question_tokens.len()
    }

    /// Number of response tokens, `n`.
    pub fn num_response_tokens(&self) -> usize {
        self.response_tokens.len()
    }

    /// Width of a response-to-prompt similarity row, `c + m`.
    pub fn prompt_len(&self) -> usize {
        self.num_doc_tokens() + self.num_question_tokens()
    }

    pub fn num_passages(&self) -> usize {
        self.passages.len()
    }

    /// Prompt columns that hold document tokens.
    pub fn doc_columns(&self) -> Range<usize> {
        self.doc_offset..self.doc_offset + self.num_doc_tokens()
    }

    /// Passage containing flattened document token `j`.
    pub fn passage_of(&self, j: usize) -> Option<usize> {
        let idx = self.passages.partition_point(|r| r.end <= j);
        (idx < self.passages.len() && self.passages[idx].contains(&j)).then_some(idx)
    }

    /// Sentence range containing response token `i`.
    pub fn sentence_of(&self, i: usize) -> Option<Range<usize>> {
        let idx = self.response_sentences.partition_point(|r| r.end <= i);
        self.response_sentences
            .get(idx)
            .filter(|r| r.contains(&i))
            .cloned()
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_id.is_empty() {
            return Err(Error::Validation("instance_id is empty".into()));
        }
        check_tiling("passage", &self.passages, self.num_doc_tokens())?;
        check_tiling("sentence", &self.response_sentences, self.num_response_tokens())?;
        if self.doc_offset + self.num_doc_tokens() > self.prompt_len() {
            return Err(Error::Validation(format!(
                "doc_offset {} + {} document tokens exceeds prompt length {}",
                self.doc_offset,
                self.num_doc_tokens(),
                self.prompt_len()
            )));
        }
        match (&self.response_text, &self.response_char_spans) {
            (Some(text), Some(spans)) => {
                if spans.len() != self.num_response_tokens() {
                    return Err(Error::Validation(format!(
                        "response_char_spans has {} entries for {} response tokens",
                        spans.len(),
                        self.num_response_tokens()
                    )));
                }
                let mut prev_end = 0;
                for (i, s) in spans.iter().enumerate() {
                    if s.start > s.end || s.end > text.len() || s.start < prev_end {
                        return Err(Error::Validation(format!(
                            "response_char_spans[{i}] = [{}, {}) is not sorted within the {}-byte text",
                            s.start,
                            s.end,
                            text.len()
                        )));
                    }
                    prev_end = s.end;
                }
            }
            (None, Some(_)) => {
                return Err(Error::Validation(
                    "response_char_spans given without response_text".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| Error::schema(path, e.to_string()))?;
        let inst = TokenizedInstance {
            instance_id: file.instance_id,
            doc_tokens: file.doc_tokens,
            passages: to_ranges(&file.passages),
            question_tokens: file.question_tokens,
            response_tokens: file.response_tokens,
            response_sentences: to_ranges(&file.response_sentences),
            doc_offset: file.doc_offset,
            response_text: file.response_text,
            response_char_spans: file.response_char_spans.as_deref().map(to_ranges),
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Canonical JSON: pretty-printed, fixed field order, trailing newline.
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            instance_id: self.instance_id.clone(),
            doc_tokens: self.doc_tokens.clone(),
            passages: to_pairs(&self.passages),
            question_tokens: self.question_tokens.clone(),
            response_tokens: self.response_tokens.clone(),
            response_sentences: to_pairs(&self.response_sentences),
            doc_offset: self.doc_offset,
            response_text: self.response_text.clone(),
            response_char_spans: self.response_char_spans.as_deref().map(to_pairs),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_instance(path: &Path) -> Result<TokenizedInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TokenizedInstance::from_json(&text, path)
}
