//! Embedded multi-field document index.
//!
//! Each index holds one corpus kind. Queries run a lexical (BM25) and/or a
//! vector (cosine) leg per requested field and fuse the legs with reciprocal
//! rank fusion. Filters are applied before ranking.

mod chunk;
mod store;

pub use chunk::{ChunkError, DocumentChunk, RELATED_IDS, URL};
pub use store::{IndexError, IndexManifest, IndexStore, RankedHit, SearchFilters};

/// File name of the line-delimited chunk records inside an index directory.
pub const CHUNKS_FILE: &str = "chunks.jsonl";
/// File name of the sidecar manifest inside an index directory.
pub const MANIFEST_FILE: &str = "manifest.json";
