//! Exact vector search, BM25, demonstration selection and pointwise
//! re-ranking.

mod bm25;
mod demos;
mod index;
mod rerank;
mod trec;

use thiserror::Error;

use crate::llmio::LlmError;

pub use crate::llmio::Embedder;
pub use bm25::{Bm25Index, Bm25Params};
pub use demos::{
    select_demonstrations, DemoIndex, DemoInput, DemoSelector, DemoStrategy, MAX_DEMOS,
};
pub use index::VectorIndex;
pub use rerank::{parse_relevance, rerank_pointwise, Reranked};
pub use trec::{format_run, validate_run, write_run, RunFile};

/// Default first-stage depth.
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("patient-similarity selection needs a patient")]
    MissingPatient,
    #[error("invalid selector: {0}")]
    InvalidSelector(String),
    #[error("need {k} examples, database has {available}")]
    TooFewExamples { k: usize, available: usize },
    #[error("embedding: {0}")]
    Embed(LlmError),
}
