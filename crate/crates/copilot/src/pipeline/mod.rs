//! Offline preprocessing: ingest local corpora, chunk, rechunk code, summarize
//! incidents, enrich code metadata, embed, and write index files.
//!
//! Records are transformed in parallel; outputs are collected in input order
//! so reruns with the scripted provider produce byte-identical files.

mod chunk;
mod enrich;
mod ingest;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use copilot_core::chunking::{ChunkingError, DEFAULT_HELPFULNESS_REF_TOKENS};
use copilot_core::{ChunkingSpec, DateKind, DocKind, Field, TicketType};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use chunk::{chunk_fixed, neighbor_window, rechunk_code, rechunk_schema, RechunkOutcome, TextChunk, RECHUNK_TASK};
pub use enrich::{
    compute_helpfulness, enrich_code, enrich_schema, summarize_incident, summary_schema, CodeMetadata,
    IncidentSummary, ENRICH_TASK, SUMMARIZE_TASK,
};
pub use ingest::{incident_to_raw, ingest, IncidentRecord, RawRecord, SourceSpec};

use crate::index::{DocumentChunk, IndexError, IndexManifest, IndexStore, RELATED_IDS, URL};
use crate::provider::{Provider, ProviderError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("path does not exist: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: malformed incident: {reason}", path.display())]
    MalformedIncident { path: PathBuf, line: usize, reason: String },
    #[error("record `{id}`: bad {key} `{value}`")]
    BadAttribute { id: String, key: String, value: String },
    #[error("record `{id}` skipped: {reason}")]
    Skipped { id: String, reason: String },
    #[error("segment `{0}` is empty")]
    EmptySegment(String),
    #[error(transparent)]
    Chunking(#[from] ChunkingError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Chunking of troubleshooting guides.
    pub document_chunking: ChunkingSpec,
    pub code_chunking: ChunkingSpec,
    pub helpfulness_ref_tokens: usize,
    /// Skip the completion-based code rechunking step.
    pub rechunk_code: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            document_chunking: ChunkingSpec::default(),
            code_chunking: ChunkingSpec::default(),
            helpfulness_ref_tokens: DEFAULT_HELPFULNESS_REF_TOKENS,
            rechunk_code: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub kind: DocKind,
    pub records: usize,
    pub chunks: usize,
    pub skipped: Vec<String>,
    pub rechunk_fallbacks: usize,
    pub manifest: IndexManifest,
}

/// Applies `f` to every item on a small thread pool, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    if items.len() < 2 || threads < 2 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("pipeline worker panicked")).collect()
    })
}

fn first_line(text: &str) -> String {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string()
}

pub struct Pipeline {
    provider: Arc<dyn Provider>,
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(provider: Arc<dyn Provider>, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.document_chunking.validate()?;
        config.code_chunking.validate()?;
        Ok(Pipeline { provider, config })
    }

    /// Ingests, transforms and indexes one source into `out_dir`.
    pub fn run(&self, spec: &SourceSpec, out_dir: &Path) -> Result<PipelineReport, PipelineError> {
        self.run_sources(spec.kind, std::slice::from_ref(spec), out_dir)
    }

    /// Builds one `kind` index from several sources. Specs of other kinds
    /// are ignored.
    pub fn run_sources(&self, kind: DocKind, specs: &[SourceSpec], out_dir: &Path) -> Result<PipelineReport, PipelineError> {
        let mut records = Vec::new();
        for spec in specs.iter().filter(|s| s.kind == kind) {
            records.extend(ingest(spec)?);
        }
        let (chunks, skipped, rechunk_fallbacks) = self.transform(kind, &records)?;
        let n = chunks.len();
        let manifest = self.build_index(kind, chunks, out_dir)?;
        info!(kind = %kind, records = records.len(), chunks = n, "index built");
        Ok(PipelineReport { kind, records: records.len(), chunks: n, skipped, rechunk_fallbacks, manifest })
    }

    /// Returns the chunks, the ids of skipped records and the number of code
    /// chunks that kept their original text.
    pub fn transform(
        &self,
        kind: DocKind,
        records: &[RawRecord],
    ) -> Result<(Vec<DocumentChunk>, Vec<String>, usize), PipelineError> {
        match kind {
            DocKind::Tsg => Ok((self.guide_chunks(records)?, Vec::new(), 0)),
            DocKind::Icm => {
                let (chunks, skipped) = self.incident_chunks(records)?;
                Ok((chunks, skipped, 0))
            }
            DocKind::Code => {
                let (chunks, fallbacks) = self.code_chunks(records)?;
                Ok((chunks, Vec::new(), fallbacks))
            }
        }
    }

    fn guide_chunks(&self, records: &[RawRecord]) -> Result<Vec<DocumentChunk>, PipelineError> {
        let mut out = Vec::new();
        for rec in records {
            let title = rec.attributes.get(ingest::ATTR_TITLE).cloned().unwrap_or_else(|| rec.id.clone());
            for c in chunk_fixed(rec, &self.config.document_chunking)? {
                let mut d = DocumentChunk::new(format!("{}#{}", rec.id, c.ordinal), &rec.source, DocKind::Tsg)
                    .with_field(Field::Title, &title)
                    .with_field(Field::Content, &c.text);
                span_extras(&mut d, &c);
                d.extras.insert(URL.into(), rec.id.clone());
                out.push(d);
            }
        }
        Ok(out)
    }

    fn incident_chunks(&self, records: &[RawRecord]) -> Result<(Vec<DocumentChunk>, Vec<String>), PipelineError> {
        let provider = self.provider.as_ref();
        let summaries = par_map(records, |r| summarize_incident(r, provider, self.config.helpfulness_ref_tokens));
        let mut chunks = Vec::new();
        let mut skipped = Vec::new();
        for (rec, summary) in records.iter().zip(summaries) {
            let s = match summary {
                Ok(s) => s,
                Err(e) => {
                    warn!(error = %e, "incident skipped");
                    skipped.push(rec.id.clone());
                    continue;
                }
            };
            let title = if s.title.is_empty() {
                rec.attributes.get(ingest::ATTR_TITLE).cloned().unwrap_or_default()
            } else {
                s.title.clone()
            };
            let mut d = DocumentChunk::new(&rec.id, &rec.source, DocKind::Icm)
                .with_field(Field::Title, title)
                .with_field(Field::Summary, &s.summary)
                .with_field(Field::Mitigation, &s.mitigation)
                .with_field(Field::Property, s.property_text());
            d.fields.retain(|_, t| !t.is_empty());
            d.helpfulness = Some(s.helpfulness);
            for (key, kind) in [
                (ingest::ATTR_CREATE_DATE, DateKind::CreateDate),
                (ingest::ATTR_RESOLVE_DATE, DateKind::ResolveDate),
            ] {
                if let Some(v) = rec.attributes.get(key) {
                    let date: NaiveDate = v.parse().map_err(|_| PipelineError::BadAttribute {
                        id: rec.id.clone(),
                        key: key.into(),
                        value: v.clone(),
                    })?;
                    d.dates.insert(kind, date);
                }
            }
            if let Some(t) = rec.attributes.get(ingest::ATTR_TICKET_TYPE) {
                d.ticket_type = t.parse::<TicketType>().map_err(|_| PipelineError::BadAttribute {
                    id: rec.id.clone(),
                    key: ingest::ATTR_TICKET_TYPE.into(),
                    value: t.clone(),
                })?;
            }
            chunks.push(d);
        }
        Ok((chunks, skipped))
    }

    fn code_chunks(&self, records: &[RawRecord]) -> Result<(Vec<DocumentChunk>, usize), PipelineError> {
        let provider = self.provider.as_ref();
        let spec = &self.config.code_chunking;
        // (record index, segment ordinal, text)
        let mut segments: Vec<(usize, usize, String)> = Vec::new();
        let mut fallbacks = 0;
        for (ri, rec) in records.iter().enumerate() {
            let chunks = chunk_fixed(rec, spec)?;
            let outcomes: Vec<RechunkOutcome> = if self.config.rechunk_code {
                let idx: Vec<usize> = (0..chunks.len()).collect();
                par_map(&idx, |&i| {
                    rechunk_code(&chunks[i], neighbor_window(&rec.body, &chunks, i, spec.neighbor_window), provider)
                })
            } else {
                chunks.iter().map(|c| RechunkOutcome { segments: vec![c.text.clone()], fell_back: true }).collect()
            };
            let mut seen = BTreeSet::new();
            for o in outcomes {
                fallbacks += usize::from(o.fell_back && self.config.rechunk_code);
                for s in o.segments {
                    if seen.insert(s.clone()) {
                        segments.push((ri, seen.len() - 1, s));
                    }
                }
            }
        }
        let ids: Vec<String> = segments.iter().map(|(ri, n, _)| format!("{}#{n}", records[*ri].id)).collect();
        let corpus: BTreeSet<String> = ids.iter().cloned().collect();
        let catalog = ids
            .iter()
            .zip(&segments)
            .map(|(id, (_, _, text))| format!("{id}: {}", first_line(text)))
            .collect::<Vec<_>>()
            .join("\n");
        let idx: Vec<usize> = (0..segments.len()).collect();
        let metas = par_map(&idx, |&i| enrich_code(&ids[i], &segments[i].2, &catalog, &corpus, provider));
        let mut out = Vec::with_capacity(segments.len());
        for ((id, (ri, _, text)), meta) in ids.iter().zip(&segments).zip(metas) {
            let meta = meta?;
            let rec = &records[*ri];
            let title = if meta.title.is_empty() { first_line(text) } else { meta.title.clone() };
            let mut d = DocumentChunk::new(id, &rec.source, DocKind::Code)
                .with_field(Field::Title, title)
                .with_field(Field::Description, &meta.description)
                .with_field(Field::Content, text)
                .with_field(Field::Reference, meta.reference_text());
            d.fields.retain(|_, t| !t.is_empty());
            d.extras.insert(URL.into(), rec.id.clone());
            if !meta.related_ids.is_empty() {
                d.extras.insert(RELATED_IDS.into(), meta.related_ids.join(","));
            }
            out.push(d);
        }
        Ok((out, fallbacks))
    }

    /// Embeds every searchable field that has text, then writes the index
    /// and its manifest.
    pub fn build_index(
        &self,
        kind: DocKind,
        mut chunks: Vec<DocumentChunk>,
        out_dir: &Path,
    ) -> Result<IndexManifest, PipelineError> {
        let fields = kind.searchable_fields();
        let jobs: Vec<(usize, Field)> = chunks
            .iter()
            .enumerate()
            .flat_map(|(i, c)| fields.iter().filter(|f| !c.text(**f).trim().is_empty()).map(move |f| (i, *f)))
            .collect();
        let provider = self.provider.as_ref();
        let vectors = par_map(&jobs, |&(i, f)| provider.embed(chunks[i].text(f)));
        for ((i, f), v) in jobs.into_iter().zip(vectors) {
            let v = v?;
            if v.values.len() != provider.dimension() {
                return Err(ProviderError::DimensionMismatch { expected: provider.dimension(), got: v.values.len() }.into());
            }
            chunks[i].embeddings.insert(f, v.values);
        }
        let mut manifest = IndexManifest::new(kind, provider.model_id(), provider.dimension());
        manifest.embedded_fields = fields.to_vec();
        let mut store = IndexStore::new(manifest);
        store.upsert(chunks)?;
        store.save(out_dir)?;
        Ok(store.manifest().clone())
    }
}

fn span_extras(d: &mut DocumentChunk, c: &TextChunk) {
    let extras: BTreeMap<String, String> = BTreeMap::from([
        ("parent".into(), c.parent_id.clone()),
        ("ordinal".into(), c.ordinal.to_string()),
        ("token_span".into(), format!("{}-{}", c.token_start, c.token_end)),
    ]);
    d.extras.extend(extras);
}
