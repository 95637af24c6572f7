//! Offline and online evaluation.
//!
//! Every evaluator has four separately callable stages: cases come from a
//! file or a generator, execution turns cases into serializable execution
//! records, evaluation reduces those records to metrics, and the runner
//! renders reports. Metrics are pure functions of cases and executions, so
//! case order never matters.

mod runner;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use copilot_core::{categorize_online, DocKind, Field, OnlineCategory, OnlineScores, PlannerMetrics, TsgMetrics};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

pub use runner::{run_eval, run_evaluator, EvalConfig, EvalReport, EvaluatorKind, EvaluatorSpec, Variant};

use crate::index::DocumentChunk;
use crate::orchestrator::{MetaPlan, Orchestrator};
use crate::pipeline::par_map;
use crate::provider::{CompletionRequest, Message, Provider, ResponseSchema, ValueKind};
use crate::querygen::{same_arguments, QueryCompilation, QueryGenerator};
use crate::retrieval::{Retriever, SourceContext};

pub const INCIDENT_RUBRIC: &str = include_str!("../../fixtures/rubrics/incident_similarity.txt");
pub const ANSWER_RUBRIC: &str = include_str!("../../fixtures/rubrics/answer_similarity.txt");
pub const ONLINE_RUBRIC: &str = include_str!("../../fixtures/rubrics/online.txt");
pub const SYNTH_PROMPT: &str = include_str!("../../fixtures/rubrics/synthesize_question.txt");

pub const INCIDENT_JUDGE_TASK: &str = "judge_incident_similarity";
pub const ANSWER_JUDGE_TASK: &str = "judge_answer_similarity";
pub const ONLINE_JUDGE_TASK: &str = "judge_online";
pub const SYNTH_TASK: &str = "synthesize_question";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reading {path}: {source}")]
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
    #[error("case {0} has an empty golden set")]
    EmptyGolden(String),
    #[error("no cases to evaluate")]
    NoCases,
    #[error("case {0} has no execution record")]
    MissingExecution(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
}

/// Reads one record per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io { path: shown.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io { path: shown.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EvalError::Parse { path: shown.clone(), line: i + 1, source })?);
    }
    Ok(out)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn judge(provider: &dyn Provider, task: &str, rubric: &str, user: String, schema: ResponseSchema) -> Option<serde_json::Map<String, Value>> {
    let req = CompletionRequest::new(task, vec![Message::system(rubric), Message::user(user)]).with_schema(schema);
    provider.complete_record(&req).ok()
}

/// Calls `f` up to twice, returning the first `Some`.
fn with_retry<T>(mut f: impl FnMut() -> Option<T>) -> Option<T> {
    f().or_else(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerCase {
    pub id: String,
    pub question: String,
    pub golden_skills: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerExecution {
    pub case_id: String,
    pub run: usize,
    pub agents: Vec<String>,
    pub selected: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerCaseResult {
    pub case_id: String,
    pub run: usize,
    #[serde(flatten)]
    pub metrics: PlannerMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerReport {
    pub cases: usize,
    pub runs: usize,
    pub precision: f64,
    pub recall: f64,
    /// Share of case runs whose selection contains every golden skill.
    pub coverage: f64,
    pub results: Vec<PlannerCaseResult>,
}

/// Plans each question from scratch and collects the skills every planned
/// agent selects.
pub fn execute_planner(o: &Orchestrator, cases: &[PlannerCase], runs: usize) -> Vec<PlannerExecution> {
    let jobs: Vec<(usize, &PlannerCase)> = (0..runs.max(1)).flat_map(|r| cases.iter().map(move |c| (r, c))).collect();
    par_map(&jobs, |&(run, case)| {
        let plan = o.plan_meta(&[Message::user(&case.question)], &MetaPlan::default());
        let selected = plan
            .agents
            .iter()
            .filter_map(|a| o.registry().agent(a))
            .flat_map(|a| o.select_skills(a, &[], &case.question))
            .map(|c| c.name)
            .collect();
        PlannerExecution { case_id: case.id.clone(), run, agents: plan.agents, selected }
    })
}

pub fn evaluate_planner(cases: &[PlannerCase], execs: &[PlannerExecution]) -> Result<PlannerReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let by_id: BTreeMap<&str, &PlannerCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    if let Some(c) = cases.iter().find(|c| c.golden_skills.is_empty()) {
        return Err(EvalError::EmptyGolden(c.id.clone()));
    }
    let mut results = Vec::new();
    for e in execs {
        let case = by_id.get(e.case_id.as_str()).ok_or_else(|| EvalError::MissingExecution(e.case_id.clone()))?;
        results.push(PlannerCaseResult {
            case_id: e.case_id.clone(),
            run: e.run,
            metrics: PlannerMetrics::compute(&e.selected, &case.golden_skills),
        });
    }
    if let Some(c) = cases.iter().find(|c| !results.iter().any(|r| r.case_id == c.id)) {
        return Err(EvalError::MissingExecution(c.id.clone()));
    }
    results.sort_by(|a, b| (&a.case_id, a.run).cmp(&(&b.case_id, b.run)));
    let runs = results.iter().map(|r| r.run).collect::<BTreeSet<_>>().len();
    Ok(PlannerReport {
        cases: cases.len(),
        runs,
        precision: mean(results.iter().map(|r| r.metrics.precision)).unwrap_or(0.0),
        recall: mean(results.iter().map(|r| r.metrics.recall)).unwrap_or(0.0),
        coverage: mean(results.iter().map(|r| if r.metrics.coverage { 1.0 } else { 0.0 })).unwrap_or(0.0),
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsgCase {
    pub id: String,
    pub question: String,
    pub golden_docs: BTreeSet<String>,
    /// Documents the final answer cited, when already known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referenced: Option<BTreeSet<String>>,
    /// A final answer to extract cited documents from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident_summary: Option<String>,
    #[serde(default)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsgExecution {
    pub case_id: String,
    pub retrieved: Vec<String>,
    pub referenced: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsgCaseResult {
    pub case_id: String,
    #[serde(flatten)]
    pub metrics: TsgMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsgReport {
    pub cases: usize,
    /// Mean over cases with a non-empty referenced set.
    pub precision: Option<f64>,
    pub precision_cases: usize,
    pub recall: Option<f64>,
    pub coverage: f64,
    pub results: Vec<TsgCaseResult>,
}

/// Candidate ids that appear verbatim in `answer`.
pub fn extract_references<'a>(answer: &str, candidates: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    candidates.into_iter().filter(|id| !id.is_empty() && answer.contains(id)).map(str::to_string).collect()
}

pub fn execute_tsg(retriever: &Retriever, cases: &[TsgCase], now: NaiveDate) -> Result<Vec<TsgExecution>, EvalError> {
    par_map(cases, |case| {
        let ctx = retriever.retrieve_tsg(&case.question, case.incident_summary.as_deref(), now)?;
        let retrieved: Vec<String> = ctx.ids().into_iter().map(str::to_string).collect();
        let referenced = case
            .referenced
            .clone()
            .or_else(|| case.answer.as_deref().map(|a| extract_references(a, retrieved.iter().map(String::as_str))));
        Ok(TsgExecution { case_id: case.id.clone(), retrieved, referenced })
    })
    .into_iter()
    .collect()
}

pub fn evaluate_tsg(cases: &[TsgCase], execs: &[TsgExecution]) -> Result<TsgReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let by_id: BTreeMap<&str, &TsgExecution> = execs.iter().map(|e| (e.case_id.as_str(), e)).collect();
    let mut results = Vec::new();
    for c in cases {
        let e = by_id.get(c.id.as_str()).ok_or_else(|| EvalError::MissingExecution(c.id.clone()))?;
        let retrieved: BTreeSet<String> = e.retrieved.iter().cloned().collect();
        let metrics = TsgMetrics::compute(&c.golden_docs, &retrieved, e.referenced.as_ref())
            .map_err(|_| EvalError::EmptyGolden(c.id.clone()))?;
        results.push(TsgCaseResult { case_id: c.id.clone(), metrics });
    }
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let precisions: Vec<f64> = results.iter().filter_map(|r| r.metrics.precision).collect();
    Ok(TsgReport {
        cases: results.len(),
        precision_cases: precisions.len(),
        precision: mean(precisions),
        recall: mean(results.iter().filter_map(|r| r.metrics.recall)),
        coverage: mean(results.iter().map(|r| r.metrics.coverage)).unwrap_or(0.0),
        results,
    })
}

/// One synthetic question per sampled chunk, with that chunk as the only
/// golden document. Chunks whose question cannot be generated are skipped.
pub fn synth_tsg_cases(chunks: &[&DocumentChunk], provider: &dyn Provider, n: usize, seed: u64) -> Vec<TsgCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<&DocumentChunk> =
        rand::seq::index::sample(&mut rng, chunks.len(), n.min(chunks.len())).into_iter().map(|i| chunks[i]).collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    let schema = ResponseSchema::new(SYNTH_TASK).field("question", ValueKind::Text);
    let questions = par_map(&picked, |c| {
        let text = [Field::Title, Field::Content].iter().map(|f| c.text(*f)).filter(|t| !t.is_empty()).collect::<Vec<_>>().join("\n");
        judge(provider, SYNTH_TASK, SYNTH_PROMPT, text, schema.clone())
            .and_then(|r| r.get("question").and_then(Value::as_str).map(str::trim).map(str::to_string))
            .filter(|q| !q.is_empty())
    });
    picked
        .into_iter()
        .zip(questions)
        .filter_map(|(c, q)| match q {
            Some(question) => Some(TsgCase {
                id: format!("synth:{}", c.id),
                question,
                golden_docs: BTreeSet::from([c.id.clone()]),
                referenced: None,
                answer: None,
                incident_summary: None,
                synthetic: true,
            }),
            None => {
                warn!(chunk = %c.id, "no synthetic question generated, skipping chunk");
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SimilarityLabel {
    Low,
    Medium,
    High,
}

impl SimilarityLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Some(SimilarityLabel::Low),
            "medium" => Some(SimilarityLabel::Medium),
            "high" => Some(SimilarityLabel::High),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentCase {
    pub id: String,
    /// Description of the new incident.
    pub incident: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentPair {
    pub retrieved_id: String,
    pub label: Option<SimilarityLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentExecution {
    pub case_id: String,
    pub variant: String,
    pub pairs: Vec<IncidentPair>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
    pub skipped: usize,
}

impl LabelCounts {
    pub fn labeled(&self) -> usize {
        self.low + self.medium + self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub cases: usize,
    pub variants: BTreeMap<String, LabelCounts>,
}

fn incident_text(c: &DocumentChunk) -> String {
    [Field::Title, Field::Summary, Field::Mitigation]
        .iter()
        .map(|f| c.text(*f))
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn judge_incident_pair(provider: &dyn Provider, incident: &str, retrieved: &str) -> Option<SimilarityLabel> {
    let schema = ResponseSchema::new(INCIDENT_JUDGE_TASK).field("label", ValueKind::Text);
    let user = format!("Incident A:\n{incident}\n\nIncident B:\n{retrieved}");
    with_retry(|| {
        judge(provider, INCIDENT_JUDGE_TASK, INCIDENT_RUBRIC, user.clone(), schema.clone())
            .and_then(|r| r.get("label").and_then(Value::as_str).and_then(SimilarityLabel::parse))
    })
}

pub fn execute_incident_similarity(
    retriever: &Retriever,
    variant: &str,
    cases: &[IncidentCase],
    source: &SourceContext,
    now: NaiveDate,
) -> Result<Vec<IncidentExecution>, EvalError> {
    let provider = retriever.provider();
    par_map(cases, |case| {
        let ctx = retriever.retrieve_icm(&case.incident, &[], source, now)?;
        let pairs = ctx
            .items
            .iter()
            .map(|item| {
                let label = judge_incident_pair(provider, &case.incident, &incident_text(&item.chunk));
                if label.is_none() {
                    warn!(case = %case.id, retrieved = %item.chunk.id, "unlabeled incident pair skipped");
                }
                IncidentPair { retrieved_id: item.chunk.id.clone(), label }
            })
            .collect();
        Ok(IncidentExecution { case_id: case.id.clone(), variant: variant.to_string(), pairs })
    })
    .into_iter()
    .collect()
}

pub fn evaluate_incident_similarity(cases: &[IncidentCase], execs: &[IncidentExecution]) -> IncidentReport {
    let mut variants: BTreeMap<String, LabelCounts> = BTreeMap::new();
    for e in execs {
        let counts = variants.entry(e.variant.clone()).or_default();
        for p in &e.pairs {
            match p.label {
                Some(SimilarityLabel::Low) => counts.low += 1,
                Some(SimilarityLabel::Medium) => counts.medium += 1,
                Some(SimilarityLabel::High) => counts.high += 1,
                None => counts.skipped += 1,
            }
        }
    }
    IncidentReport { cases: cases.len(), variants }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPair {
    pub id: String,
    pub answer: String,
    pub golden: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRating {
    pub id: String,
    pub rating: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReport {
    pub pairs: usize,
    pub rated: usize,
    pub mean: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
    pub ratings: Vec<AnswerRating>,
}

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 4.0;

pub fn judge_answer_pair(provider: &dyn Provider, answer: &str, golden: &str) -> Option<u8> {
    let schema = ResponseSchema::new(ANSWER_JUDGE_TASK).field("rating", ValueKind::Integer);
    let user = format!("Reference answer:\n{golden}\n\nCandidate answer:\n{answer}");
    with_retry(|| {
        judge(provider, ANSWER_JUDGE_TASK, ANSWER_RUBRIC, user.clone(), schema.clone())
            .and_then(|r| r.get("rating").and_then(Value::as_u64))
            .filter(|r| (1..=5).contains(r))
            .map(|r| r as u8)
    })
}

pub fn execute_answer_similarity(provider: &dyn Provider, pairs: &[AnswerPair]) -> Result<Vec<AnswerRating>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoCases);
    }
    Ok(par_map(pairs, |p| {
        let rating = judge_answer_pair(provider, &p.answer, &p.golden);
        if rating.is_none() {
            warn!(pair = %p.id, "no integer rating, pair skipped");
        }
        AnswerRating { id: p.id.clone(), rating }
    }))
}

pub fn evaluate_answer_similarity(ratings: &[AnswerRating], threshold: f64) -> Result<AnswerReport, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::NoCases);
    }
    let mut ratings = ratings.to_vec();
    ratings.sort_by(|a, b| a.id.cmp(&b.id));
    let mean = mean(ratings.iter().filter_map(|r| r.rating).map(f64::from));
    Ok(AnswerReport {
        pairs: ratings.len(),
        rated: ratings.iter().filter(|r| r.rating.is_some()).count(),
        mean,
        threshold,
        passed: mean.is_some_and(|m| m >= threshold),
        ratings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineCase {
    pub id: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub documents: String,
    /// Scores already assigned; otherwise the judge assigns them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<OnlineScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineExecution {
    pub case_id: String,
    pub scores: Option<OnlineScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub cases: usize,
    pub scored: usize,
    pub categories: BTreeMap<OnlineCategory, usize>,
}

pub fn judge_online(provider: &dyn Provider, case: &OnlineCase) -> Option<OnlineScores> {
    let schema = ResponseSchema::new(ONLINE_JUDGE_TASK)
        .field("answer_relevance", ValueKind::Integer)
        .field("doc_relevance", ValueKind::Integer)
        .field("groundedness", ValueKind::Integer);
    let user = format!("Question:\n{}\n\nRetrieved documents:\n{}\n\nAnswer:\n{}", case.question, case.documents, case.answer);
    with_retry(|| {
        let r = judge(provider, ONLINE_JUDGE_TASK, ONLINE_RUBRIC, user.clone(), schema.clone())?;
        let get = |k: &str| r.get(k).and_then(Value::as_u64).and_then(|v| u8::try_from(v).ok());
        OnlineScores::new(get("answer_relevance")?, get("doc_relevance")?, get("groundedness")?).ok()
    })
}

pub fn execute_online(provider: &dyn Provider, cases: &[OnlineCase]) -> Vec<OnlineExecution> {
    par_map(cases, |c| OnlineExecution {
        case_id: c.id.clone(),
        scores: c.scores.or_else(|| judge_online(provider, c)),
    })
}

/// Counts per category. Out-of-range or missing scores are not counted.
pub fn evaluate_online(execs: &[OnlineExecution]) -> OnlineReport {
    let mut categories: BTreeMap<OnlineCategory, usize> = OnlineCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut scored = 0;
    for e in execs {
        if let Some(cat) = e.scores.as_ref().and_then(|s| categorize_online(s).ok()) {
            *categories.entry(cat).or_default() += 1;
            scored += 1;
        }
    }
    OnlineReport { cases: execs.len(), scored, categories }
}

/// Online cases built from logged conversation text.
pub fn online_cases_from_telemetry(events: &[crate::gateway::TelemetryEvent]) -> Vec<OnlineCase> {
    events
        .iter()
        .filter(|e| e.kind == crate::gateway::TelemetryKind::ConversationDetail)
        .enumerate()
        .map(|(i, e)| OnlineCase {
            id: format!("{}:{i}", e.session_id),
            question: e.payload["question"].as_str().unwrap_or("").to_string(),
            answer: e.payload["answer"].as_str().unwrap_or("").to_string(),
            documents: String::new(),
            scores: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGenCase {
    pub id: String,
    pub kind: DocKind,
    pub question: String,
    pub expected: QueryCompilation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGenExecution {
    pub case_id: String,
    pub compiled: Option<QueryCompilation>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGenReport {
    pub cases: usize,
    pub exact_match: f64,
    pub results: Vec<QueryGenExecution>,
}

pub fn execute_querygen(qg: &QueryGenerator, cases: &[QueryGenCase]) -> Vec<QueryGenExecution> {
    par_map(cases, |c| {
        let compiled = qg.compile(c.kind, &c.question, &[]).ok();
        let exact = compiled.as_ref().is_some_and(|got| same_arguments(&c.expected, got));
        QueryGenExecution { case_id: c.id.clone(), compiled, exact }
    })
}

pub fn evaluate_querygen(execs: &[QueryGenExecution]) -> Result<QueryGenReport, EvalError> {
    if execs.is_empty() {
        return Err(EvalError::NoCases);
    }
    let mut results = execs.to_vec();
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(QueryGenReport {
        cases: results.len(),
        exact_match: mean(results.iter().map(|r| if r.exact { 1.0 } else { 0.0 })).unwrap_or(0.0),
        results,
    })
}
