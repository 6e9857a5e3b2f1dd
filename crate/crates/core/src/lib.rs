//! Fine-grained evidence attribution for retrieval-augmented generation.
//!
//! Given a tokenized instance (documents, question, response), a
//! response-to-prompt similarity matrix and optionally a dependency parse of
//! the response, the engine returns scored document tokens supporting any
//! span of the response.

pub mod attribution;
pub mod baselines;
pub mod depaug;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod interchange;
pub mod methods;
pub mod similarity;
pub mod span;

pub use error::{Error, Result};
pub use span::Span;
