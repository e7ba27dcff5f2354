//! Benchmark harness for chat-completion language models on extraction and
//! retrieval over tabular electronic health records.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: patients, features, repositories and snapshot I/O
//! - [`ingest`]: five-table CSV loading and the seeded synthetic corpus
//! - [`sqlmini`]: restricted SQL parser/evaluator producing gold answers
//! - [`datasets`]: extraction/retrieval datasets, query reformulation, splits
//! - [`serialize`]: feature selection, table-to-text serializers, truncation
//! - [`prompt`]: instruction registry and prompt assembly
//! - [`select`]: vector index, BM25, demonstration selection, re-ranking
//! - [`llmio`]: chat/embedding clients, mock model, response cache
//! - [`metrics`]: Rouge-1, embedding-match F1, MAP, Recall@K
//! - [`runner`]: experiment execution, Δ% aggregation and reports

pub mod datasets;
pub mod ingest;
pub mod llmio;
pub mod metrics;
pub mod model;
pub mod par;
pub mod prompt;
pub mod runner;
pub mod select;
pub mod serialize;
pub mod sqlmini;
pub mod text;
