//! Pure ranking and planning kernels for the copilot engine.
//!
//! Everything here runs on `core` + `alloc`: tokenization, BM25 scoring,
//! hashed embeddings, reciprocal rank fusion, incident re-ranking, margin
//! filtering, evaluation metrics, dependency staging and fixed-size chunk
//! windows. IO, providers and services live in the `copilot` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bm25;
pub mod chunking;
pub mod dag;
pub mod fusion;
pub mod metrics;
pub mod rerank;
pub mod text;
pub mod timephrase;
pub mod types;
pub mod vector;

pub use bm25::{Bm25Corpus, Bm25Params};
pub use chunking::{fixed_windows, helpfulness, ChunkingSpec, TokenWindow};
pub use dag::{execution_stages, DagError};
pub use fusion::{rrf_fuse, FusedHit, FusionError, DEFAULT_RRF_K};
pub use metrics::{categorize_online, OnlineCategory, OnlineScores, PlannerMetrics, TsgMetrics};
pub use rerank::{
    filter_by_margin, min_max_normalize, rerank_score, time_score, RerankComponents,
    RerankWeights,
};
pub use types::{DateKind, DocKind, Field, SearchMethod, SearchQuery, TicketFilter, TicketType};
