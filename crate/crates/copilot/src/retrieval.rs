//! Retrieval skills over the three corpora.
//!
//! Incidents are re-ranked by a weighted sum of information, recency and
//! source-match scores. Troubleshooting guides are fused across the compiled
//! queries and cut at the first significant score gap. Code hits carry their
//! one-hop related chunks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::NaiveDate;
use copilot_core::fusion::sort_by_score_then_id;
use copilot_core::{
    filter_by_margin, min_max_normalize, rerank_score, rrf_fuse, time_score, DateKind, DocKind, Field,
    RerankComponents, RerankWeights, SearchMethod, SearchQuery,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{DocumentChunk, IndexError, IndexStore, RankedHit};
use crate::provider::{Message, Provider, ProviderError};
use crate::querygen::{QueryCompilation, QueryGenError, QueryGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Final number of results.
    pub top_k: usize,
    /// Hits fetched per compiled query.
    pub per_query_n: usize,
    pub weights: RerankWeights,
    pub time_decay_tau: f64,
    pub margin_delta: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k: 4,
            per_query_n: 20,
            weights: RerankWeights::default(),
            time_decay_tau: 180.0,
            margin_delta: 0.2,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: String| Err(RetrievalError::Config(m));
        if self.top_k == 0 || self.top_k > self.per_query_n {
            return bad(format!("need 1 <= top_k <= per_query_n, got {} and {}", self.top_k, self.per_query_n));
        }
        if !(self.time_decay_tau > 0.0) {
            return bad(format!("time_decay_tau must be positive, got {}", self.time_decay_tau));
        }
        if !(0.0..=1.0).contains(&self.margin_delta) {
            return bad(format!("margin_delta must lie in [0, 1], got {}", self.margin_delta));
        }
        self.weights.validate().map_err(|e| RetrievalError::Config(e.to_string()))
    }
}

/// Team and monitor identifiers of the conversation, matched against an
/// incident's source and property text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceContext {
    #[serde(default)]
    pub teams: Vec<String>,
    #[serde(default)]
    pub monitors: Vec<String>,
}

impl SourceContext {
    fn identifiers(&self) -> impl Iterator<Item = &str> {
        self.teams.iter().chain(&self.monitors).map(|s| s.trim()).filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    /// The chunk with its embeddings stripped.
    pub chunk: DocumentChunk,
    pub score: f64,
    /// Search text of the first query that found the chunk.
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<RerankComponents>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related: Vec<DocumentChunk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub kind: DocKind,
    pub items: Vec<RetrievedItem>,
    #[serde(default)]
    pub repo_descriptions: BTreeMap<String, String>,
}

impl RetrievedContext {
    pub fn empty(kind: DocKind) -> Self {
        RetrievedContext { kind, items: Vec::new(), repo_descriptions: BTreeMap::new() }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.chunk.id.as_str()).collect()
    }

    /// Plain-text rendering used as completion context.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (source, desc) in &self.repo_descriptions {
            if !desc.is_empty() {
                out.push_str(&format!("Repository {source}: {desc}\n"));
            }
        }
        for item in &self.items {
            render_chunk(&mut out, &item.chunk);
            for r in &item.related {
                out.push_str("  related: ");
                render_chunk(&mut out, r);
            }
        }
        out
    }
}

fn render_chunk(out: &mut String, c: &DocumentChunk) {
    out.push_str(&format!("[{}] ({})", c.id, c.source));
    for (field, text) in &c.fields {
        if !text.is_empty() {
            out.push_str(&format!("\n{field}: {text}"));
        }
    }
    out.push('\n');
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no {0} index is loaded")]
    IndexNotLoaded(DocKind),
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error(transparent)]
    QueryGen(#[from] QueryGenError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// IS: the precomputed helpfulness, clamped into [0, 1]; 0 when missing.
pub fn info_score(chunk: &DocumentChunk) -> f64 {
    chunk.helpfulness.map_or(0.0, |h| if h.is_nan() { 0.0 } else { h.clamp(0.0, 1.0) })
}

/// SS: 1 when any context identifier appears in the source or property text.
pub fn source_score(chunk: &DocumentChunk, ctx: &SourceContext) -> f64 {
    let source = chunk.source.to_lowercase();
    let property = chunk.text(Field::Property).to_lowercase();
    let hit = ctx.identifiers().any(|id| {
        let id = id.to_lowercase();
        source == id || source.contains(&id) || property.contains(&id)
    });
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Age in days of the resolve date, or of the create date when unresolved.
/// Future dates count as age 0.
pub fn incident_age_days(chunk: &DocumentChunk, now: NaiveDate) -> Option<f64> {
    let date = chunk
        .dates
        .get(&DateKind::ResolveDate)
        .or_else(|| chunk.dates.get(&DateKind::CreateDate))?;
    Some((now - *date).num_days().max(0) as f64)
}

/// Raw (unnormalized) components of one incident.
pub fn raw_components(
    chunk: &DocumentChunk,
    ctx: &SourceContext,
    tau: f64,
    now: NaiveDate,
) -> RerankComponents {
    let time = incident_age_days(chunk, now).map_or(0.0, |age| time_score(age, tau).unwrap_or(0.0));
    RerankComponents { info: info_score(chunk), time, source: source_score(chunk, ctx) }
}

/// Scores every candidate, normalizing each component over the whole set,
/// and returns them best first (ties by id).
pub fn rerank_candidates<'a>(
    candidates: &[&'a DocumentChunk],
    ctx: &SourceContext,
    config: &RetrievalConfig,
    now: NaiveDate,
) -> Vec<(&'a DocumentChunk, RerankComponents, f64)> {
    let raw: Vec<RerankComponents> =
        candidates.iter().map(|c| raw_components(c, ctx, config.time_decay_tau, now)).collect();
    let info = min_max_normalize(&raw.iter().map(|r| r.info).collect::<Vec<_>>());
    let time = min_max_normalize(&raw.iter().map(|r| r.time).collect::<Vec<_>>());
    let source = min_max_normalize(&raw.iter().map(|r| r.source).collect::<Vec<_>>());
    let mut scored: Vec<_> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let comp = RerankComponents { info: info[i], time: time[i], source: source[i] };
            (*c, comp, rerank_score(&comp, &config.weights))
        })
        .collect();
    sort_by_score_then_id(&mut scored, |(c, _, s)| (*s, c.id.as_str()));
    scored
}

fn stripped(chunk: &DocumentChunk) -> DocumentChunk {
    let mut c = chunk.clone();
    c.embeddings.clear();
    c
}

/// Read-only retrieval over loaded indexes.
#[derive(Clone)]
pub struct Retriever {
    provider: Arc<dyn Provider>,
    querygen: QueryGenerator,
    indexes: BTreeMap<DocKind, Arc<IndexStore>>,
    pub config: RetrievalConfig,
    /// Source identifier to a short description of that repository.
    pub repo_descriptions: BTreeMap<String, String>,
}

impl std::fmt::Debug for Retriever {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Retriever")
            .field("indexes", &self.indexes.keys().collect::<Vec<_>>())
            .field("config", &self.config)
            .finish()
    }
}

impl Retriever {
    pub fn new(
        provider: Arc<dyn Provider>,
        querygen: QueryGenerator,
        config: RetrievalConfig,
    ) -> Result<Self, RetrievalError> {
        config.validate()?;
        Ok(Retriever {
            provider,
            querygen,
            indexes: BTreeMap::new(),
            config,
            repo_descriptions: BTreeMap::new(),
        })
    }

    pub fn with_index(mut self, index: Arc<IndexStore>) -> Self {
        self.indexes.insert(index.kind(), index);
        self
    }

    pub fn index(&self, kind: DocKind) -> Result<&IndexStore, RetrievalError> {
        self.indexes.get(&kind).map(|i| i.as_ref()).ok_or(RetrievalError::IndexNotLoaded(kind))
    }

    pub fn provider(&self) -> &dyn Provider {
        self.provider.as_ref()
    }

    pub fn querygen(&self) -> &QueryGenerator {
        &self.querygen
    }

    /// Runs every query concurrently; results come back in query order.
    pub fn run_queries(
        &self,
        index: &IndexStore,
        queries: &[SearchQuery],
        now: NaiveDate,
    ) -> Result<Vec<Vec<RankedHit>>, RetrievalError> {
        std::thread::scope(|s| {
            let handles: Vec<_> = queries
                .iter()
                .map(|q| s.spawn(move || self.run_query(index, q, now)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("query thread panicked")).collect()
        })
    }

    fn run_query(&self, index: &IndexStore, q: &SearchQuery, now: NaiveDate) -> Result<Vec<RankedHit>, RetrievalError> {
        if index.is_empty() {
            return Ok(Vec::new());
        }
        let vec = match q.method {
            SearchMethod::Simple => None,
            _ => Some(self.provider.embed(&q.search_text)?.values),
        };
        Ok(index.search(q, vec.as_deref(), now)?)
    }

    /// Compile, fetch top N per query, union, re-rank, keep top K.
    pub fn retrieve_icm(
        &self,
        question: &str,
        history: &[Message],
        ctx: &SourceContext,
        now: NaiveDate,
    ) -> Result<RetrievedContext, RetrievalError> {
        let index = self.index(DocKind::Icm)?;
        let compilation = self.querygen.compile_icm_query(question, history)?;
        self.retrieve_icm_compiled(index, &compilation, ctx, now)
    }

    pub fn retrieve_icm_compiled(
        &self,
        index: &IndexStore,
        compilation: &QueryCompilation,
        ctx: &SourceContext,
        now: NaiveDate,
    ) -> Result<RetrievedContext, RetrievalError> {
        let queries: Vec<SearchQuery> = compilation
            .queries
            .iter()
            .map(|q| SearchQuery { top_n: self.config.per_query_n, ..q.clone() })
            .collect();
        let per_query = self.run_queries(index, &queries, now)?;
        let mut provenance: BTreeMap<&str, &str> = BTreeMap::new();
        for (q, hits) in queries.iter().zip(&per_query) {
            for h in hits {
                provenance.entry(h.chunk_id.as_str()).or_insert(q.search_text.as_str());
            }
        }
        let candidates: Vec<&DocumentChunk> =
            provenance.keys().filter_map(|id| index.get(id)).collect();
        let items = rerank_candidates(&candidates, ctx, &self.config, now)
            .into_iter()
            .take(self.config.top_k)
            .map(|(c, comp, score)| RetrievedItem {
                chunk: stripped(c),
                score,
                provenance: provenance[c.id.as_str()].to_string(),
                components: Some(comp),
                related: Vec::new(),
            })
            .collect();
        Ok(self.with_descriptions(DocKind::Icm, items))
    }

    /// Multi-query hybrid search fused across queries, then margin-filtered.
    pub fn retrieve_tsg(
        &self,
        question: &str,
        incident_summary: Option<&str>,
        now: NaiveDate,
    ) -> Result<RetrievedContext, RetrievalError> {
        let index = self.index(DocKind::Tsg)?;
        let compilation = self.querygen.compile_tsg_query(question, incident_summary)?;
        self.fuse_queries(index, DocKind::Tsg, &compilation, now, true)
    }

    pub fn retrieve_code(&self, question: &str, now: NaiveDate) -> Result<RetrievedContext, RetrievalError> {
        let index = self.index(DocKind::Code)?;
        let compilation = self.querygen.compile_code_query(question)?;
        let mut ctx = self.fuse_queries(index, DocKind::Code, &compilation, now, false)?;
        for item in &mut ctx.items {
            item.related = item
                .chunk
                .related_ids()
                .into_iter()
                .filter(|id| *id != item.chunk.id)
                .filter_map(|id| index.get(id))
                .map(stripped)
                .collect();
        }
        Ok(ctx)
    }

    fn fuse_queries(
        &self,
        index: &IndexStore,
        kind: DocKind,
        compilation: &QueryCompilation,
        now: NaiveDate,
        margin: bool,
    ) -> Result<RetrievedContext, RetrievalError> {
        let queries: Vec<SearchQuery> = compilation
            .queries
            .iter()
            .map(|q| SearchQuery { top_n: self.config.per_query_n, ..q.clone() })
            .collect();
        let per_query = self.run_queries(index, &queries, now)?;
        let lists: Vec<(String, Vec<&str>)> = per_query
            .iter()
            .enumerate()
            .map(|(i, hits)| (format!("q{i}"), hits.iter().map(|h| h.chunk_id.as_str()).collect()))
            .collect();
        let fused = rrf_fuse(&lists, index.manifest().rrf_k).map_err(IndexError::from)?;
        let fused = if margin { filter_by_margin(fused, self.config.margin_delta, |h| h.score) } else { fused };
        let items = fused
            .into_iter()
            .take(self.config.top_k)
            .filter_map(|h| {
                let chunk = index.get(&h.id)?;
                let first = h.ranks.keys().next().and_then(|l| l[1..].parse::<usize>().ok()).unwrap_or(0);
                Some(RetrievedItem {
                    chunk: stripped(chunk),
                    score: h.score,
                    provenance: queries[first].search_text.clone(),
                    components: None,
                    related: Vec::new(),
                })
            })
            .collect();
        Ok(self.with_descriptions(kind, items))
    }

    fn with_descriptions(&self, kind: DocKind, items: Vec<RetrievedItem>) -> RetrievedContext {
        let sources: BTreeSet<&str> = items.iter().map(|i| i.chunk.source.as_str()).collect();
        let repo_descriptions = sources
            .into_iter()
            .map(|s| (s.to_string(), self.repo_descriptions.get(s).cloned().unwrap_or_default()))
            .collect();
        RetrievedContext { kind, items, repo_descriptions }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexManifest;
    use crate::provider::{MatchScope, Reply, ScriptRule, ScriptedBehavior, ScriptedProvider};
    use crate::querygen::{FewShots, CODE_TASK, ICM_TASK, TSG_TASK};
    use copilot_core::TicketType;
    use serde_json::{json, Value};

    fn now() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 6, 30).unwrap()
    }

    fn rule(task: &str, reply: Value) -> ScriptRule {
        ScriptRule {
            task: Some(task.into()),
            pattern: None,
            scope: MatchScope::LastUser,
            reply: Reply::Record(reply.as_object().unwrap().clone()),
        }
    }

    fn provider(rules: Vec<ScriptRule>) -> Arc<dyn Provider> {
        Arc::new(ScriptedProvider::new(ScriptedBehavior { rules, ..Default::default() }).unwrap())
    }

    fn embed_all(p: &dyn Provider, mut c: DocumentChunk) -> DocumentChunk {
        for (f, t) in c.fields.clone() {
            if !t.trim().is_empty() {
                c.embeddings.insert(f, p.embed(&t).unwrap().values);
            }
        }
        c
    }

    fn retriever(p: Arc<dyn Provider>, config: RetrievalConfig, chunks: Vec<DocumentChunk>, kind: DocKind) -> Retriever {
        let mut idx = IndexStore::new(IndexManifest::new(kind, p.model_id(), p.dimension()));
        idx.upsert(chunks.into_iter().map(|c| embed_all(p.as_ref(), c)).collect()).unwrap();
        let qg = QueryGenerator::new(p.clone(), FewShots::bundled(), config.per_query_n);
        Retriever::new(p, qg, config).unwrap().with_index(Arc::new(idx))
    }

    fn incident(id: &str, source: &str, help: f64, resolved_ago: i64) -> DocumentChunk {
        let mut c = DocumentChunk::new(id, source, DocKind::Icm)
            .with_field(Field::Summary, format!("server restart incident {id}"))
            .with_field(Field::Mitigation, "restarted the server");
        c.helpfulness = Some(help);
        c.ticket_type = TicketType::Cri;
        c.dates.insert(DateKind::ResolveDate, now() - chrono::Duration::days(resolved_ago));
        c
    }

    #[test]
    fn component_scores() {
        let mut c = incident("a", "sqldb", 0.8, 0);
        assert_eq!(info_score(&c), 0.8);
        c.helpfulness = None;
        assert_eq!(info_score(&c), 0.0);
        let ctx = SourceContext { teams: vec!["sqldb".into()], monitors: vec![] };
        assert_eq!(source_score(&c, &ctx), 1.0);
        assert_eq!(source_score(&c, &SourceContext::default()), 0.0);
        c.source = "other".into();
        c.fields.insert(Field::Property, "monitor: MON-42 fired".into());
        let ctx = SourceContext { teams: vec![], monitors: vec!["MON-42".into()] };
        assert_eq!(source_score(&c, &ctx), 1.0);
    }

    #[test]
    fn icm_top_k_matches_brute_force() {
        let p = provider(vec![rule(ICM_TASK, json!({"user_intent": "server restart", "search_field": "summary"}))]);
        let config = RetrievalConfig { top_k: 2, per_query_n: 3, ..Default::default() };
        let chunks = vec![incident("a", "t1", 0.2, 100), incident("b", "t2", 0.9, 5), incident("c", "t1", 0.5, 40)];
        let r = retriever(p, config.clone(), chunks.clone(), DocKind::Icm);
        let ctx = SourceContext { teams: vec!["t1".into()], monitors: vec![] };
        let got = r.retrieve_icm("restarts?", &[], &ctx, now()).unwrap();
        let refs: Vec<&DocumentChunk> = chunks.iter().collect();
        let expect: Vec<&str> =
            rerank_candidates(&refs, &ctx, &config, now()).iter().take(2).map(|(c, _, _)| c.id.as_str()).collect();
        assert_eq!(got.ids(), expect);
        assert!(got.items.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(got.items.iter().all(|i| i.chunk.embeddings.is_empty()));
    }

    #[test]
    fn icm_dedups_across_queries() {
        let p = provider(vec![]);
        let r = retriever(p, RetrievalConfig::default(), vec![incident("a", "t", 0.5, 1)], DocKind::Icm);
        let idx = r.index(DocKind::Icm).unwrap();
        let q = SearchQuery::new("server restart", vec![Field::Summary], 20);
        let compilation = QueryCompilation {
            user_intent: "x".into(),
            queries: vec![q.clone(), SearchQuery { search_text: "restart".into(), ..q }],
            origin: crate::querygen::QueryOrigin::Llm,
        };
        let got = r.retrieve_icm_compiled(idx, &compilation, &SourceContext::default(), now()).unwrap();
        assert_eq!(got.ids(), ["a"]);
        assert_eq!(got.items[0].provenance, "server restart");
    }

    #[test]
    fn empty_index_gives_empty_context() {
        let p = provider(vec![]);
        let r = retriever(p, RetrievalConfig::default(), vec![], DocKind::Icm);
        assert!(r.retrieve_icm("anything", &[], &SourceContext::default(), now()).unwrap().items.is_empty());
        assert!(matches!(r.retrieve_tsg("x", None, now()), Err(RetrievalError::IndexNotLoaded(DocKind::Tsg))));
    }

    fn guide(id: &str, source: &str, title: &str, content: &str) -> DocumentChunk {
        DocumentChunk::new(id, source, DocKind::Tsg)
            .with_field(Field::Title, title)
            .with_field(Field::Content, content)
    }

    #[test]
    fn tsg_fusion_margin_and_descriptions() {
        let p = provider(vec![rule(TSG_TASK, json!({"rephrased_query": "restart gateway"}))]);
        let chunks = vec![
            guide("g1", "ops", "Restart the gateway", "restart gateway pods"),
            guide("g2", "net", "Gateway certificates", "rotate gateway certificate"),
            guide("g3", "ops", "Disk cleanup", "remove old logs"),
        ];
        let config = RetrievalConfig { margin_delta: 1.0, ..Default::default() };
        let mut r = retriever(p.clone(), config, chunks.clone(), DocKind::Tsg);
        r.repo_descriptions.insert("ops".into(), "Operations runbooks".into());
        let got = r.retrieve_tsg("how to restart the gateway", None, now()).unwrap();
        assert_eq!(got.items[0].chunk.id, "g1");
        assert!(got.items.len() <= 4);
        for item in &got.items {
            assert!(got.repo_descriptions.contains_key(&item.chunk.source));
        }
        assert_eq!(got.repo_descriptions["ops"], "Operations runbooks");
        let all = got.items.len();

        let config = RetrievalConfig { margin_delta: 0.0, ..Default::default() };
        let r = retriever(p, config, chunks, DocKind::Tsg);
        let cut = r.retrieve_tsg("how to restart the gateway", None, now()).unwrap();
        assert!(!cut.items.is_empty() && cut.items.len() <= all);
    }

    #[test]
    fn code_attaches_related_chunks() {
        let p = provider(vec![rule(CODE_TASK, json!({"search_text": "SOSScheduler", "search_fields": ["title"]}))]);
        let mut c1 = DocumentChunk::new("c1", "repo", DocKind::Code)
            .with_field(Field::Title, "SOSScheduler.run")
            .with_field(Field::Content, "fn run() { queue.pop() }");
        c1.extras.insert(crate::index::RELATED_IDS.into(), "c2,missing".into());
        let c2 = DocumentChunk::new("c2", "repo", DocKind::Code)
            .with_field(Field::Title, "Queue")
            .with_field(Field::Content, "struct Queue");
        let r = retriever(p, RetrievalConfig::default(), vec![c1, c2], DocKind::Code);
        let got = r.retrieve_code("where is SOSScheduler", now()).unwrap();
        assert_eq!(got.items[0].chunk.id, "c1");
        assert_eq!(got.items[0].related.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(), ["c2"]);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::default().validate().is_ok());
        assert!(RetrievalConfig { top_k: 30, ..Default::default() }.validate().is_err());
        assert!(RetrievalConfig { margin_delta: 1.5, ..Default::default() }.validate().is_err());
        assert!(RetrievalConfig { time_decay_tau: 0.0, ..Default::default() }.validate().is_err());
    }
}
