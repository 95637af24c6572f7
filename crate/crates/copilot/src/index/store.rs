use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use copilot_core::fusion::sort_by_score_then_id;
use copilot_core::vector::cosine;
use copilot_core::{
    rrf_fuse, Bm25Corpus, Bm25Params, DateKind, DocKind, Field, FusionError, SearchMethod,
    SearchQuery, TicketFilter, DEFAULT_RRF_K,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChunkError, DocumentChunk, CHUNKS_FILE, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub kind: DocKind,
    pub model_id: String,
    pub dimension: usize,
    pub rrf_k: f64,
    pub bm25: Bm25Params,
    #[serde(default)]
    pub embedded_fields: Vec<Field>,
    #[serde(default)]
    pub chunk_count: usize,
}

impl IndexManifest {
    pub fn new(kind: DocKind, model_id: impl Into<String>, dimension: usize) -> Self {
        IndexManifest {
            kind,
            model_id: model_id.into(),
            dimension,
            rrf_k: DEFAULT_RRF_K,
            bm25: Bm25Params::default(),
            embedded_fields: Vec::new(),
            chunk_count: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("chunk id `{0}` appears more than once in the batch")]
    DuplicateId(String),
    #[error("chunk `{id}` is a {got} chunk, index holds {expected}")]
    WrongKind { id: String, expected: DocKind, got: DocKind },
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("field `{field}` is not indexed for {kind}")]
    UnknownField { field: Field, kind: DocKind },
    #[error("invalid query: {0}")]
    Query(#[from] copilot_core::types::QueryError),
    #[error("query needs a vector leg but no query embedding was supplied")]
    MissingQueryVector,
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One fused search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub chunk_id: String,
    pub fused_score: f64,
    /// Leg label ("lexical:title", "vector:content", ...) to 1-based rank.
    pub per_list_ranks: BTreeMap<String, usize>,
    /// Field of the leg where the chunk ranked best.
    pub matched_field: Field,
}

/// Predicates applied before ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchFilters {
    pub time_filters: BTreeMap<DateKind, u32>,
    pub ticket: TicketFilter,
    /// Reference date for age computations.
    pub now: NaiveDate,
}

impl SearchFilters {
    pub fn none(now: NaiveDate) -> Self {
        SearchFilters { time_filters: BTreeMap::new(), ticket: TicketFilter::All, now }
    }

    pub fn from_query(q: &SearchQuery, now: NaiveDate) -> Self {
        SearchFilters { time_filters: q.time_filters.clone(), ticket: q.ticket_type, now }
    }

    /// A chunk without the filtered date never passes a time filter.
    pub fn admits(&self, chunk: &DocumentChunk) -> bool {
        if !self.ticket.admits(chunk.ticket_type) {
            return false;
        }
        self.time_filters.iter().all(|(kind, max_days)| {
            chunk
                .dates
                .get(kind)
                .is_some_and(|d| (self.now - *d).num_days() <= i64::from(*max_days))
        })
    }
}

#[derive(Debug, Clone, Default)]
struct LexicalField {
    corpus: Bm25Corpus,
    ids: Vec<String>,
}

/// In-memory index over one corpus kind.
///
/// Readers share `&IndexStore`; writers need `&mut`. Wrap in a `RwLock` for
/// concurrent use.
#[derive(Debug, Clone)]
pub struct IndexStore {
    manifest: IndexManifest,
    chunks: BTreeMap<String, DocumentChunk>,
    lexical: BTreeMap<Field, LexicalField>,
}

impl IndexStore {
    pub fn new(manifest: IndexManifest) -> Self {
        let mut store = IndexStore { manifest, chunks: BTreeMap::new(), lexical: BTreeMap::new() };
        store.rebuild_lexical();
        store
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn kind(&self) -> DocKind {
        self.manifest.kind
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DocumentChunk> {
        self.chunks.get(id)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &DocumentChunk> {
        self.chunks.values()
    }

    /// Inserts or replaces chunks by id. The batch is checked as a whole
    /// before anything is stored.
    pub fn upsert(&mut self, batch: Vec<DocumentChunk>) -> Result<usize, IndexError> {
        let mut seen = BTreeSet::new();
        for c in &batch {
            if !seen.insert(c.id.as_str()) {
                return Err(IndexError::DuplicateId(c.id.clone()));
            }
            c.validate()?;
            if c.kind != self.manifest.kind {
                return Err(IndexError::WrongKind {
                    id: c.id.clone(),
                    expected: self.manifest.kind,
                    got: c.kind,
                });
            }
            if let Some(v) = c.embeddings.values().find(|v| v.len() != self.manifest.dimension) {
                return Err(IndexError::DimensionMismatch {
                    expected: self.manifest.dimension,
                    got: v.len(),
                });
            }
        }
        let n = batch.len();
        for c in batch {
            self.chunks.insert(c.id.clone(), c);
        }
        self.manifest.chunk_count = self.chunks.len();
        self.rebuild_lexical();
        Ok(n)
    }

    fn rebuild_lexical(&mut self) {
        self.lexical.clear();
        for &field in self.manifest.kind.searchable_fields() {
            let mut lf = LexicalField { corpus: Bm25Corpus::new(self.manifest.bm25), ids: Vec::new() };
            for c in self.chunks.values() {
                lf.corpus.add(c.text(field));
                lf.ids.push(c.id.clone());
            }
            self.lexical.insert(field, lf);
        }
    }

    fn check_field(&self, field: Field) -> Result<(), IndexError> {
        if self.manifest.kind.searchable_fields().contains(&field) {
            Ok(())
        } else {
            Err(IndexError::UnknownField { field, kind: self.manifest.kind })
        }
    }

    /// BM25 ranking of admitted chunks with at least one query term in `field`.
    pub fn lexical_rank(
        &self,
        query_text: &str,
        field: Field,
        filters: &SearchFilters,
    ) -> Result<Vec<(String, f64)>, IndexError> {
        self.check_field(field)?;
        let lf = &self.lexical[&field];
        let mut out: Vec<(String, f64)> = lf
            .ids
            .iter()
            .enumerate()
            .filter(|(_, id)| filters.admits(&self.chunks[id.as_str()]))
            .filter_map(|(ord, id)| lf.corpus.score(ord, query_text).map(|s| (id.clone(), s)))
            .collect();
        sort_by_score_then_id(&mut out, |(id, s)| (*s, id.as_str()));
        Ok(out)
    }

    /// Cosine ranking of admitted chunks that carry an embedding for `field`.
    pub fn vector_rank(
        &self,
        query_vec: &[f32],
        field: Field,
        filters: &SearchFilters,
    ) -> Result<Vec<(String, f64)>, IndexError> {
        self.check_field(field)?;
        if query_vec.len() != self.manifest.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.manifest.dimension,
                got: query_vec.len(),
            });
        }
        let mut out: Vec<(String, f64)> = self
            .chunks
            .values()
            .filter(|c| filters.admits(c))
            .filter_map(|c| c.embeddings.get(&field).map(|v| (c.id.clone(), cosine(query_vec, v))))
            .collect();
        sort_by_score_then_id(&mut out, |(id, s)| (*s, id.as_str()));
        Ok(out)
    }

    /// Runs `query`: one leg per (field, method) fused by RRF, truncated to `top_n`.
    pub fn search(
        &self,
        query: &SearchQuery,
        query_vec: Option<&[f32]>,
        now: NaiveDate,
    ) -> Result<Vec<RankedHit>, IndexError> {
        query.validate(self.manifest.kind)?;
        let filters = SearchFilters::from_query(query, now);
        let (lexical, vector) = match query.method {
            SearchMethod::Simple => (true, false),
            SearchMethod::Vector => (false, true),
            // semantic runs as hybrid; a completion-based reorder is an opt-in retrieval step
            SearchMethod::Hybrid | SearchMethod::Semantic => (true, true),
        };
        let mut legs: Vec<(String, Vec<String>)> = Vec::new();
        for &field in &query.fields {
            if lexical {
                let ranked = self.lexical_rank(&query.search_text, field, &filters)?;
                legs.push((format!("lexical:{field}"), ranked.into_iter().map(|(id, _)| id).collect()));
            }
            if vector {
                let v = query_vec.ok_or(IndexError::MissingQueryVector)?;
                let ranked = self.vector_rank(v, field, &filters)?;
                legs.push((format!("vector:{field}"), ranked.into_iter().map(|(id, _)| id).collect()));
            }
        }
        let fused = rrf_fuse(&legs, self.manifest.rrf_k)?;
        Ok(fused
            .into_iter()
            .take(query.top_n)
            .map(|h| {
                let matched_field = best_field(&h.ranks, &legs).unwrap_or(query.fields[0]);
                RankedHit {
                    chunk_id: h.id,
                    fused_score: h.score,
                    per_list_ranks: h.ranks,
                    matched_field,
                }
            })
            .collect())
    }

    /// Number of ranked legs `query` would fuse.
    pub fn leg_count(query: &SearchQuery) -> usize {
        let per_field = match query.method {
            SearchMethod::Simple | SearchMethod::Vector => 1,
            SearchMethod::Hybrid | SearchMethod::Semantic => 2,
        };
        per_field * query.fields.len()
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| IndexError::Io { path: path.clone(), source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let chunks_path = dir.join(CHUNKS_FILE);
        let file = File::create(&chunks_path).map_err(io(&chunks_path))?;
        let mut w = BufWriter::new(file);
        for c in self.chunks.values() {
            let line = serde_json::to_string(c).expect("chunk serializes");
            writeln!(w, "{line}").map_err(io(&chunks_path))?;
        }
        w.flush().map_err(io(&chunks_path))?;

        let manifest_path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, text + "\n").map_err(io(&manifest_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let shown = manifest_path.display().to_string();
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|source| IndexError::Io { path: shown.clone(), source })?;
        let manifest: IndexManifest = serde_json::from_str(&text)
            .map_err(|source| IndexError::Parse { path: shown, line: 1, source })?;

        let chunks_path = dir.join(CHUNKS_FILE);
        let shown = chunks_path.display().to_string();
        let file = File::open(&chunks_path).map_err(|source| IndexError::Io { path: shown.clone(), source })?;
        let mut chunks = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| IndexError::Io { path: shown.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: DocumentChunk = serde_json::from_str(&line)
                .map_err(|source| IndexError::Parse { path: shown.clone(), line: i + 1, source })?;
            chunks.push(chunk);
        }
        let mut store = IndexStore::new(manifest);
        store.upsert(chunks)?;
        Ok(store)
    }
}

fn best_field(ranks: &BTreeMap<String, usize>, legs: &[(String, Vec<String>)]) -> Option<Field> {
    legs.iter()
        .filter_map(|(label, _)| ranks.get(label).map(|r| (*r, label)))
        .min_by_key(|(r, _)| *r)
        .and_then(|(_, label)| label.split_once(':'))
        .and_then(|(_, f)| f.parse().ok())
}
