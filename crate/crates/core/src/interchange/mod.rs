//! On-disk data model shared by producers, the engine, the harness and the
//! service. See `docs/formats.md` for the byte-level schemas.

mod depparse;
mod drops;
mod instance;
mod matrix;

pub use depparse::{load_depparse, DepParse, SentenceParse};
pub(crate) use depparse::{check_tree, children_of};
pub use drops::{load_drops, DropEntry, DropTable};
pub use instance::{load_instance, TokenizedInstance};
pub use matrix::{
    load_matrix, meta_path, read_meta, save_hidden, save_similarity, save_stack, AttentionStack,
    ColumnSpace, HiddenStates, LoadedMatrix, MatrixKind, MatrixMeta, Provenance, SimilarityKind,
    SimilarityMatrix,
};
