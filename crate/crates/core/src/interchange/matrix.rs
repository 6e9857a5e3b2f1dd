//! Dense score matrices: the `<name>.f32` payload (little-endian f32,
//! row-major) and its `<name>.meta.json` sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TokenizedInstance;
use crate::error::{Error, Result};

/// What a matrix file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    /// Head-averaged attention, one `rows x cols` block.
    AttentionAverage,
    /// Cosine similarity of hidden states, one `rows x cols` block.
    HiddenCosine,
    /// A similarity produced by some other method.
    External,
    /// `heads` stacked per-head attention blocks of one layer.
    AttentionStack,
    /// Hidden states: prompt rows first, then response rows; `cols` is the width.
    HiddenStates,
}

/// Which token stream the columns of a score matrix run over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnSpace {
    #[default]
    Prompt,
    /// Response-to-response scores (`n x n`), used by attention-based augmentation.
    Response,
}

/// Sidecar metadata (`<name>.meta.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMeta {
    pub kind: MatrixKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_offset: Option<usize>,
    #[serde(default, skip_serializing_if = "is_prompt")]
    pub columns: ColumnSpace,
}

fn is_prompt(c: &ColumnSpace) -> bool {
    *c == ColumnSpace::Prompt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    AttentionAverage,
    HiddenCosine,
    External,
}

impl SimilarityKind {
    fn as_matrix_kind(self) -> MatrixKind {
        match self {
            SimilarityKind::AttentionAverage => MatrixKind::AttentionAverage,
            SimilarityKind::HiddenCosine => MatrixKind::HiddenCosine,
            SimilarityKind::External => MatrixKind::External,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: SimilarityKind,
    pub layer: Option<usize>,
    pub heads_averaged: Option<usize>,
}

/// Dense `rows x cols` scores. Row `i` scores the prediction of response
/// token `i`; producers are responsible for that alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub provenance: Provenance,
    pub columns: ColumnSpace,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                what: "similarity values".into(),
                expected: format!("{rows}x{cols} = {}", rows * cols),
                found: values.len().to_string(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
                value: values[pos] as f32,
            });
        }
        Ok(SimilarityMatrix {
            rows,
            cols,
            values,
            provenance,
            columns: ColumnSpace::Prompt,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], provenance: Provenance) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape {
                what: format!("similarity row {bad}"),
                expected: cols.to_string(),
                found: rows[bad].len().to_string(),
            });
        }
        Self::new(rows.len(), cols, rows.concat(), provenance)
    }

    pub fn with_columns(mut self, columns: ColumnSpace) -> Self {
        self.columns = columns;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rounds every entry to f32 precision, matching what a save/load
    /// round trip yields.
    pub fn round_to_f32(mut self) -> SimilarityMatrix {
        self.values.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        self
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> SimilarityMatrix {
        SimilarityMatrix {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Checks the matrix against an instance: `n x (c + m)` for prompt
    /// scores, `n x n` for response-to-response scores.
    pub fn check_against(&self, inst: &TokenizedInstance) -> Result<()> {
        let n = inst.num_response_tokens();
        let cols = match self.columns {
            ColumnSpace::Prompt => inst.prompt_len(),
            ColumnSpace::Response => n,
        };
        check_shape("similarity matrix", (n, cols), (self.rows, self.cols))
    }

    pub fn meta(&self, doc_offset: Option<usize>) -> MatrixMeta {
        MatrixMeta {
            kind: self.provenance.kind.as_matrix_kind(),
            rows: self.rows,
            cols: self.cols,
            layer: self.provenance.layer,
            heads: self.provenance.heads_averaged,
            doc_offset,
            columns: self.columns,
        }
    }
}

/// Per-head attention of one layer, each head `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub layer: Option<usize>,
    rows: usize,
    cols: usize,
    heads: Vec<Vec<f64>>,
}

impl AttentionStack {
    pub fn new(layer: Option<usize>, rows: usize, cols: usize, heads: Vec<Vec<f64>>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Validation("attention stack has no heads".into()));
        }
        for (h, head) in heads.iter().enumerate() {
            if head.len() != rows * cols {
                return Err(Error::Shape {
                    what: format!("attention head {h}"),
                    expected: format!("{rows}x{cols}"),
                    found: format!("{} values", head.len()),
                });
            }
            for (pos, &v) in head.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        row: pos / cols,
                        col: pos % cols,
                        value: v as f32,
                    });
                }
                if v < 0.0 {
                    return Err(Error::Validation(format!(
                        "negative attention weight {v} in head {h} at row {}, column {}",
                        pos / cols,
                        pos % cols
                    )));
                }
            }
        }
        Ok(AttentionStack {
            layer,
            rows,
            cols,
            heads,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, h: usize) -> &[f64] {
        &self.heads[h]
    }
}

/// Hidden states of the prompt (`(c + m) x dim`) and response (`n x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub layer: Option<usize>,
    dim: usize,
    prompt: Vec<f64>,
    response: Vec<f64>,
}

impl HiddenStates {
    pub fn new(layer: Option<usize>, dim: usize, prompt: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("hidden state width is zero".into()));
        }
        for (which, v) in [("prompt", &prompt), ("response", &response)] {
            if v.len() % dim != 0 {
                return Err(Error::Shape {
                    what: format!("{which} hidden states"),
                    expected: format!("a multiple of {dim}"),
                    found: v.len().to_string(),
                });
            }
            if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    row: pos / dim,
                    col: pos % dim,
                    value: v[pos] as f32,
                });
            }
        }
        Ok(HiddenStates {
            layer,
            dim,
            prompt,
            response,
        })
    }

    pub fn from_rows(layer: Option<usize>, prompt: &[Vec<f64>], response: &[Vec<f64>]) -> Result<Self> {
        let dim = prompt.first().or(response.first()).map_or(0, Vec::len);
        for (which, rows) in [("prompt", prompt), ("response", response)] {
            if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
                return Err(Error::Shape {
                    what: format!("{which} hidden row {bad}"),
                    expected: dim.to_string(),
                    found: rows[bad].len().to_string(),
                });
            }
        }
        Self::new(layer, dim, prompt.concat(), response.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_prompt(&self) -> usize {
        self.prompt.len() / self.dim
    }

    pub fn num_response(&self) -> usize {
        self.response.len() / self.dim
    }

    pub fn prompt_row(&self, j: usize) -> &[f64] {
        &self.prompt[j * self.dim..(j + 1) * self.dim]
    }

    pub fn response_row(&self, i: usize) -> &[f64] {
        &self.response[i * self.dim..(i + 1) * self.dim]
    }

    /// Rounds every entry to f32 precision.
    pub fn round_to_f32(mut self) -> HiddenStates {
        for v in self.prompt.iter_mut().chain(self.response.iter_mut()) {
            *v = f64::from(*v as f32);
        }
        self
    }

    /// Multiplies every row by a positive per-row factor.
    pub fn rescaled(&self, prompt_factors: &[f64], response_factors: &[f64]) -> HiddenStates {
        let scale = |data: &[f64], factors: &[f64]| -> Vec<f64> {
            data.chunks(self.dim)
                .zip(factors)
                .flat_map(|(row, f)| row.iter().map(move |x| x * f))
                .collect()
        };
        HiddenStates {
            layer: self.layer,
            dim: self.dim,
            prompt: scale(&self.prompt, prompt_factors),
            response: scale(&self.response, response_factors),
        }
    }

    pub fn check_against(&self, inst: &TokenizedInstance) -> Result<()> {
        check_shape(
            "prompt hidden states",
            (inst.prompt_len(), self.dim),
            (self.num_prompt(), self.dim),
        )?;
        check_shape(
            "response hidden states",
            (inst.num_response_tokens(), self.dim),
            (self.num_response(), self.dim),
        )
    }
}

fn check_shape(what: &str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            what: what.into(),
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        });
    }
    Ok(())
}

/// Whatever a matrix file turned out to contain.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedMatrix {
    Similarity(SimilarityMatrix),
    Stack(AttentionStack),
    Hidden(HiddenStates),
}

/// `foo.f32` -> `foo.meta.json`.
pub fn meta_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("meta.json")
}

fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Shape {
            what: format!("payload {}", path.display()),
            expected: format!("{expected} f32 values ({} bytes)", expected * 4),
            found: format!("{} bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn check_finite(values: &[f32], cols: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::NonFinite {
            row: pos / cols.max(1),
            col: pos % cols.max(1),
            value: values[pos],
        }),
        None => Ok(()),
    }
}

pub fn read_meta(path: &Path) -> Result<MatrixMeta> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
}

/// Loads `path` (the `.f32` payload) using its sidecar and cross-checks the
/// shape against `inst`.
pub fn load_matrix(path: &Path, inst: &TokenizedInstance) -> Result<LoadedMatrix> {
    let meta_file = meta_path(path);
    let meta = read_meta(&meta_file)?;
    if let Some(o) = meta.doc_offset {
        if o != inst.doc_offset {
            return Err(Error::Validation(format!(
                "{} declares doc_offset {o} but instance {} has {}",
                meta_file.display(),
                inst.instance_id,
                inst.doc_offset
            )));
        }
    }
    let n = inst.num_response_tokens();
    let expected_cols = match meta.columns {
        ColumnSpace::Prompt => inst.prompt_len(),
        ColumnSpace::Response => n,
    };
    match meta.kind {
        MatrixKind::AttentionAverage | MatrixKind::HiddenCosine | MatrixKind::External => {
            check_shape("matrix", (n, expected_cols), (meta.rows, meta.cols))?;
            let raw = read_f32_le(path, meta.rows * meta.cols)?;
            check_finite(&raw, meta.cols)?;
            let kind = match meta.kind {
                MatrixKind::AttentionAverage => SimilarityKind::AttentionAverage,
                MatrixKind::HiddenCosine => SimilarityKind::HiddenCosine,
                _ => SimilarityKind::External,
            };
            let m = SimilarityMatrix::new(
                meta.rows,
                meta.cols,
                raw.into_iter().map(f64::from).collect(),
                Provenance {
                    kind,
                    layer: meta.layer,
                    heads_averaged: meta.heads,
                },
            )?
            .with_columns(meta.columns);
            Ok(LoadedMatrix::Similarity(m))
        }
        MatrixKind::AttentionStack => {
            check_shape("attention stack", (n, expected_cols), (meta.rows, meta.cols))?;
            let heads = meta
                .heads
                .ok_or_else(|| Error::schema(&meta_file, "attention-stack requires `heads`"))?;
            let block = meta.rows * meta.cols;
            let raw = read_f32_le(path, heads * block)?;
            check_finite(&raw, meta.cols)?;
            let heads = raw
                .chunks(block.max(1))
                .take(heads)
                .map(|c| c.iter().map(|&v| f64::from(v)).collect())
                .collect();
            Ok(LoadedMatrix::Stack(AttentionStack::new(
                meta.layer, meta.rows, meta.cols, heads,
            )?))
        }
        MatrixKind::HiddenStates => {
            let total = inst.prompt_len() + n;
            if meta.rows != total {
                return Err(Error::Shape {
                    what: "hidden states rows (prompt + response)".into(),
                    expected: total.to_string(),
                    found: meta.rows.to_string(),
                });
            }
            let raw = read_f32_le(path, meta.rows * meta.cols)?;
            check_finite(&raw, meta.cols)?;
            let mut all: Vec<f64> = raw.into_iter().map(f64::from).collect();
            let response = all.split_off(inst.prompt_len() * meta.cols);
            Ok(LoadedMatrix::Hidden(HiddenStates::new(
                meta.layer, meta.cols, all, response,
            )?))
        }
    }
}

fn write_payload(path: &Path, meta: &MatrixMeta, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    std::fs::write(&meta_file, text).map_err(|e| Error::io(&meta_file, e))
}

pub fn save_similarity(path: &Path, m: &SimilarityMatrix, doc_offset: Option<usize>) -> Result<()> {
    write_payload(path, &m.meta(doc_offset), m.values().iter().copied())
}

pub fn save_stack(path: &Path, s: &AttentionStack, doc_offset: Option<usize>) -> Result<()> {
    let meta = MatrixMeta {
        kind: MatrixKind::AttentionStack,
        rows: s.rows,
        cols: s.cols,
        layer: s.layer,
        heads: Some(s.num_heads()),
        doc_offset,
        columns: ColumnSpace::Prompt,
    };
    write_payload(path, &meta, s.heads.iter().flatten().copied())
}

pub fn save_hidden(path: &Path, h: &HiddenStates, doc_offset: Option<usize>) -> Result<()> {
    let meta = MatrixMeta {
        kind: MatrixKind::HiddenStates,
        rows: h.num_prompt() + h.num_response(),
        cols: h.dim,
        layer: h.layer,
        heads: None,
        doc_offset,
        columns: ColumnSpace::Prompt,
    };
    write_payload(path, &meta, h.prompt.iter().chain(&h.response).copied())
}
