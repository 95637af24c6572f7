//! Natural-language question to structured [`SearchQuery`] compilation.
//!
//! Each compiler makes one schema-constrained completion with few-shot
//! examples in the prompt. When the provider errors or returns arguments that
//! do not form a valid query, [`fallback_parse`] takes over.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use copilot_core::{timephrase, DateKind, DocKind, Field, SearchQuery};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tracing::warn;

use crate::provider::{CompletionRequest, Message, Provider, ProviderError, ResponseSchema, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOrigin {
    Llm,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCompilation {
    pub user_intent: String,
    pub queries: Vec<SearchQuery>,
    pub origin: QueryOrigin,
}

/// One few-shot record: a question and the compilation it should produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub expected: QueryCompilation,
}

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("incident summary is empty")]
    EmptySummary,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}:{line}: {reason}")]
    Fixture { path: String, line: usize, reason: String },
}

/// Few-shot examples per corpus kind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FewShots {
    pub icm: Vec<FewShotExample>,
    pub tsg: Vec<FewShotExample>,
    pub code: Vec<FewShotExample>,
}

impl FewShots {
    /// The examples bundled with the crate.
    pub fn bundled() -> Self {
        let parse = |name: &str, text: &str| {
            parse_fewshots(name, text).expect("bundled few-shot fixtures parse")
        };
        FewShots {
            icm: parse("icm.jsonl", include_str!("../fixtures/fewshot/icm.jsonl")),
            tsg: parse("tsg.jsonl", include_str!("../fixtures/fewshot/tsg.jsonl")),
            code: parse("code.jsonl", include_str!("../fixtures/fewshot/code.jsonl")),
        }
    }

    pub fn for_kind(&self, kind: DocKind) -> &[FewShotExample] {
        match kind {
            DocKind::Icm => &self.icm,
            DocKind::Tsg => &self.tsg,
            DocKind::Code => &self.code,
        }
    }

    pub fn set(&mut self, kind: DocKind, examples: Vec<FewShotExample>) {
        match kind {
            DocKind::Icm => self.icm = examples,
            DocKind::Tsg => self.tsg = examples,
            DocKind::Code => self.code = examples,
        }
    }
}

/// Reads a line-delimited few-shot file.
pub fn load_fewshots(path: &Path) -> Result<Vec<FewShotExample>, QueryGenError> {
    let text = std::fs::read_to_string(path).map_err(|e| QueryGenError::Fixture {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    parse_fewshots(&path.display().to_string(), &text)
}

pub fn parse_fewshots(name: &str, text: &str) -> Result<Vec<FewShotExample>, QueryGenError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| QueryGenError::Fixture {
                path: name.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Deterministic compilation used when the provider path fails.
///
/// Time and ticket cues only apply to incidents; the other corpora carry no
/// dates or ticket types, so a filter there would drop every document.
pub fn fallback_parse(question: &str, kind: DocKind, top_n: usize) -> QueryCompilation {
    let mut q = SearchQuery::new(question.trim(), kind.default_fields().to_vec(), top_n);
    if kind == DocKind::Icm {
        q.time_filters = timephrase::time_filters(question);
        q.ticket_type = timephrase::ticket_filter(question);
    }
    QueryCompilation {
        user_intent: question.trim().to_string(),
        queries: vec![q],
        origin: QueryOrigin::Fallback,
    }
}

pub const ICM_TASK: &str = "icm_query";
pub const TSG_TASK: &str = "tsg_query";
pub const CODE_TASK: &str = "code_query";
pub const HINT_TASK: &str = "search_hint";

const ICM_PROMPT: &str = "You turn questions about past incidents into search arguments.
Return user_intent (concise search keywords), search_field (one of summary, title, property, mitigation),
search_method (hybrid, vector, simple or semantic), time_range (date kind to days, date kinds are
create_date, resolve_date, modified_date; omit when the question names no period) and
ticket_type (LSI for live site incidents, CRI for customer-reported incidents, otherwise ALL).";

const TSG_PROMPT: &str = "Rephrase the question into a concise search query for troubleshooting guides.
Return rephrased_query.";

const CODE_PROMPT: &str = "You turn questions about a codebase into search arguments.
Return search_text and search_fields. Fields: title (names of classes and functions),
description (what the code does, for explanation requests), content (the code itself),
reference (code that uses or is used by a component), or All for every field.";

const HINT_PROMPT: &str = "Write a short passage, in the style of a troubleshooting guide, that would
resolve the incident below. It is used as a search query, so name concrete components and actions.";

fn icm_schema() -> ResponseSchema {
    ResponseSchema::new(ICM_TASK)
        .field("user_intent", ValueKind::Text)
        .field("search_field", ValueKind::Text)
        .optional("search_method", ValueKind::Text)
        .optional("time_range", ValueKind::Record)
        .optional("ticket_type", ValueKind::Text)
}

fn tsg_schema() -> ResponseSchema {
    ResponseSchema::new(TSG_TASK).field("rephrased_query", ValueKind::Text)
}

fn code_schema() -> ResponseSchema {
    ResponseSchema::new(CODE_TASK)
        .field("search_text", ValueKind::Text)
        .field("search_fields", ValueKind::TextList)
}

/// Prompt-side rendering of an example's expected arguments.
fn example_arguments(kind: DocKind, ex: &FewShotExample) -> Value {
    let first = ex.expected.queries.first();
    match kind {
        DocKind::Icm => {
            let q = first.cloned().unwrap_or_else(|| SearchQuery::new("", vec![], 1));
            json!({
                "user_intent": ex.expected.user_intent,
                "search_field": q.fields.first().map(|f| f.as_str()).unwrap_or("summary"),
                "search_method": q.method,
                "time_range": q.time_filters,
                "ticket_type": q.ticket_type,
            })
        }
        DocKind::Tsg => json!({"rephrased_query": ex.expected.user_intent}),
        DocKind::Code => json!({
            "search_text": first.map_or(ex.expected.user_intent.as_str(), |q| q.search_text.as_str()),
            "search_fields": first.map(|q| q.fields.clone()).unwrap_or_default(),
        }),
    }
}

#[derive(Clone)]
pub struct QueryGenerator {
    provider: Arc<dyn Provider>,
    fewshots: FewShots,
    /// Result budget of every emitted query.
    pub top_n: usize,
    pub max_examples: usize,
    pub history_window: usize,
}

impl std::fmt::Debug for QueryGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryGenerator").field("top_n", &self.top_n).finish()
    }
}

impl QueryGenerator {
    pub fn new(provider: Arc<dyn Provider>, fewshots: FewShots, top_n: usize) -> Self {
        QueryGenerator { provider, fewshots, top_n, max_examples: 4, history_window: 6 }
    }

    fn messages(&self, kind: DocKind, system: &str, history: &[Message], question: &str) -> Vec<Message> {
        let mut sys = String::from(system);
        let examples = self.fewshots.for_kind(kind);
        if !examples.is_empty() {
            sys.push_str("\n\nExamples:");
            for ex in examples.iter().take(self.max_examples) {
                sys.push_str(&format!(
                    "\nQuestion: {}\nArguments: {}",
                    ex.question,
                    example_arguments(kind, ex)
                ));
            }
        }
        let mut out = vec![Message::system(sys)];
        let skip = history.len().saturating_sub(self.history_window);
        out.extend(history[skip..].iter().filter(|m| m.role != crate::provider::Role::System).cloned());
        out.push(Message::user(question));
        out
    }

    pub fn compile_icm_query(&self, question: &str, history: &[Message]) -> Result<QueryCompilation, QueryGenError> {
        if question.trim().is_empty() {
            return Err(QueryGenError::EmptyQuestion);
        }
        let req = CompletionRequest::new(ICM_TASK, self.messages(DocKind::Icm, ICM_PROMPT, history, question))
            .with_schema(icm_schema());
        let parsed = self
            .provider
            .complete_record(&req)
            .map_err(|e| e.to_string())
            .and_then(|rec| self.icm_from_record(&rec));
        Ok(parsed.unwrap_or_else(|reason| {
            warn!(%reason, "icm query compilation fell back");
            fallback_parse(question, DocKind::Icm, self.top_n)
        }))
    }

    fn icm_from_record(&self, rec: &Map<String, Value>) -> Result<QueryCompilation, String> {
        let intent = text_of(rec, "user_intent").unwrap_or_default().trim().to_string();
        let field: Field = text_of(rec, "search_field")
            .unwrap_or_default()
            .parse()
            .map_err(|e| format!("{e}"))?;
        let mut q = SearchQuery::new(intent.clone(), vec![field], self.top_n);
        if let Some(m) = text_of(rec, "search_method") {
            q.method = m.parse().map_err(|e| format!("{e}"))?;
        }
        if let Some(range) = rec.get("time_range").and_then(Value::as_object) {
            q.time_filters = parse_time_range(range)?;
        }
        if let Some(t) = text_of(rec, "ticket_type") {
            q.ticket_type = t.parse().map_err(|e| format!("{e}"))?;
        }
        q.validate(DocKind::Icm).map_err(|e| e.to_string())?;
        Ok(QueryCompilation { user_intent: intent, queries: vec![q], origin: QueryOrigin::Llm })
    }

    /// Original question plus the rephrased query, then an optional search
    /// hint derived from the incident summary.
    pub fn compile_tsg_query(
        &self,
        question: &str,
        incident_summary: Option<&str>,
    ) -> Result<QueryCompilation, QueryGenError> {
        if question.trim().is_empty() {
            return Err(QueryGenError::EmptyQuestion);
        }
        let req = CompletionRequest::new(TSG_TASK, self.messages(DocKind::Tsg, TSG_PROMPT, &[], question))
            .with_schema(tsg_schema());
        let fields = DocKind::Tsg.default_fields().to_vec();
        let mut compilation = match self.provider.complete_record(&req) {
            Ok(rec) => {
                let rephrased = text_of(&rec, "rephrased_query").unwrap_or_default().trim().to_string();
                let mut texts = vec![question.trim().to_string()];
                if !rephrased.is_empty() && !texts.iter().any(|t| t.eq_ignore_ascii_case(&rephrased)) {
                    texts.push(rephrased.clone());
                }
                QueryCompilation {
                    user_intent: if rephrased.is_empty() { question.trim().to_string() } else { rephrased },
                    queries: texts
                        .into_iter()
                        .map(|t| SearchQuery::new(t, fields.clone(), self.top_n))
                        .collect(),
                    origin: QueryOrigin::Llm,
                }
            }
            Err(e) => {
                warn!(error = %e, "tsg query compilation fell back");
                fallback_parse(question, DocKind::Tsg, self.top_n)
            }
        };
        if let Some(summary) = incident_summary.filter(|s| !s.trim().is_empty()) {
            match self.generate_search_hint(summary) {
                Ok(hint) => compilation.queries.push(SearchQuery::new(hint, fields, self.top_n)),
                Err(e) => warn!(error = %e, "search hint omitted"),
            }
        }
        Ok(compilation)
    }

    /// Hypothetical resolution passage for an incident, used as search text.
    pub fn generate_search_hint(&self, incident_summary: &str) -> Result<String, QueryGenError> {
        if incident_summary.trim().is_empty() {
            return Err(QueryGenError::EmptySummary);
        }
        let req = CompletionRequest::new(
            HINT_TASK,
            vec![Message::system(HINT_PROMPT), Message::user(incident_summary)],
        );
        let hint = self.provider.complete(&req)?.into_text();
        if hint.trim().is_empty() {
            return Err(ProviderError::Malformed("empty search hint".into()).into());
        }
        Ok(hint.trim().to_string())
    }

    pub fn compile_code_query(&self, question: &str) -> Result<QueryCompilation, QueryGenError> {
        if question.trim().is_empty() {
            return Err(QueryGenError::EmptyQuestion);
        }
        let req = CompletionRequest::new(CODE_TASK, self.messages(DocKind::Code, CODE_PROMPT, &[], question))
            .with_schema(code_schema());
        let parsed = self
            .provider
            .complete_record(&req)
            .map_err(|e| e.to_string())
            .and_then(|rec| self.code_from_record(&rec));
        Ok(parsed.unwrap_or_else(|reason| {
            warn!(%reason, "code query compilation fell back");
            fallback_parse(question, DocKind::Code, self.top_n)
        }))
    }

    fn code_from_record(&self, rec: &Map<String, Value>) -> Result<QueryCompilation, String> {
        let text = text_of(rec, "search_text").unwrap_or_default().trim().to_string();
        let mut fields = Vec::new();
        for name in rec["search_fields"].as_array().into_iter().flatten().filter_map(Value::as_str) {
            if name.trim().eq_ignore_ascii_case("all") {
                fields = DocKind::Code.searchable_fields().to_vec();
                break;
            }
            let f: Field = name.parse().map_err(|e| format!("{e}"))?;
            if !fields.contains(&f) {
                fields.push(f);
            }
        }
        let q = SearchQuery::new(text.clone(), fields, self.top_n);
        q.validate(DocKind::Code).map_err(|e| e.to_string())?;
        Ok(QueryCompilation { user_intent: text, queries: vec![q], origin: QueryOrigin::Llm })
    }

    pub fn compile(&self, kind: DocKind, question: &str, history: &[Message]) -> Result<QueryCompilation, QueryGenError> {
        match kind {
            DocKind::Icm => self.compile_icm_query(question, history),
            DocKind::Tsg => self.compile_tsg_query(question, None),
            DocKind::Code => self.compile_code_query(question),
        }
    }
}

fn text_of<'a>(rec: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    rec.get(key).and_then(Value::as_str)
}

fn parse_time_range(range: &Map<String, Value>) -> Result<BTreeMap<DateKind, u32>, String> {
    range
        .iter()
        .map(|(k, v)| {
            let kind: DateKind = k.parse().map_err(|e| format!("{e}"))?;
            let days = v
                .as_u64()
                .and_then(|d| u32::try_from(d).ok())
                .ok_or_else(|| format!("time range for {k} is not a day count"))?;
            Ok((kind, days))
        })
        .collect()
}

/// True when `TicketFilter` and time filters of two compilations agree;
/// used by the query-generation evaluator.
pub fn same_filters(a: &SearchQuery, b: &SearchQuery) -> bool {
    a.time_filters == b.time_filters && a.ticket_type == b.ticket_type
}

/// Exact-match comparison of compiled argument sets (fields, method,
/// filters), ignoring search text wording.
pub fn same_arguments(a: &QueryCompilation, b: &QueryCompilation) -> bool {
    a.queries.len() == b.queries.len()
        && a.queries.iter().zip(&b.queries).all(|(x, y)| {
            let mut fx = x.fields.clone();
            let mut fy = y.fields.clone();
            fx.sort();
            fy.sort();
            fx == fy && x.method == y.method && same_filters(x, y)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use copilot_core::{SearchMethod, TicketFilter};
    use crate::provider::{MatchScope, Reply, ScriptRule, ScriptedBehavior, ScriptedProvider};

    const Q1: &str = "Show me customer-reported incidents resolved by restarting the server in the last two weeks.";
    const Q2: &str = "Are there any live site incidents created in the last two days involving issues on server testserver1?";

    fn rule(task: &str, pattern: Option<&str>, reply: Value) -> ScriptRule {
        ScriptRule {
            task: Some(task.into()),
            pattern: pattern.map(Into::into),
            scope: MatchScope::LastUser,
            reply: Reply::Record(reply.as_object().unwrap().clone()),
        }
    }

    fn generator(rules: Vec<ScriptRule>) -> QueryGenerator {
        let p = ScriptedProvider::new(ScriptedBehavior { rules, ..Default::default() }).unwrap();
        QueryGenerator::new(Arc::new(p), FewShots::bundled(), 20)
    }

    #[test]
    fn icm_examples_compile_to_expected_arguments() {
        let g = generator(vec![
            rule(ICM_TASK, Some("restarting the server"), json!({
                "user_intent": "Customer-reported incidents resolved by restarting the server",
                "search_field": "mitigation",
                "time_range": {"resolve_date": 14},
                "ticket_type": "CRI"
            })),
            rule(ICM_TASK, Some("testserver1"), json!({
                "user_intent": "Issues on server testserver1",
                "search_field": "property",
                "time_range": {"create_date": 2},
                "ticket_type": "LSI"
            })),
        ]);
        let c = g.compile_icm_query(Q1, &[]).unwrap();
        assert_eq!(c.origin, QueryOrigin::Llm);
        assert_eq!(c.user_intent, "Customer-reported incidents resolved by restarting the server");
        let q = &c.queries[0];
        assert_eq!(q.fields, [Field::Mitigation]);
        assert_eq!(q.time_filters, BTreeMap::from([(DateKind::ResolveDate, 14)]));
        assert_eq!(q.ticket_type, TicketFilter::Cri);

        let c = g.compile_icm_query(Q2, &[]).unwrap();
        let q = &c.queries[0];
        assert_eq!(c.user_intent, "Issues on server testserver1");
        assert_eq!(q.fields, [Field::Property]);
        assert_eq!(q.time_filters, BTreeMap::from([(DateKind::CreateDate, 2)]));
        assert_eq!(q.ticket_type, TicketFilter::Lsi);
    }

    #[test]
    fn fallback_reproduces_time_and_ticket_parts() {
        let c = fallback_parse(Q1, DocKind::Icm, 20);
        assert_eq!(c.origin, QueryOrigin::Fallback);
        assert_eq!(c.queries[0].time_filters, BTreeMap::from([(DateKind::ResolveDate, 14)]));
        assert_eq!(c.queries[0].ticket_type, TicketFilter::Cri);
        let c = fallback_parse(Q2, DocKind::Icm, 20);
        assert_eq!(c.queries[0].time_filters, BTreeMap::from([(DateKind::CreateDate, 2)]));
        assert_eq!(c.queries[0].ticket_type, TicketFilter::Lsi);
        assert_eq!(c.queries[0].fields, [Field::Summary, Field::Title]);

        let c = fallback_parse("why is the queue slow", DocKind::Icm, 20);
        assert!(c.queries[0].time_filters.is_empty());
        assert_eq!(c.queries[0].ticket_type, TicketFilter::All);
    }

    #[test]
    fn provider_failure_or_bad_arguments_use_fallback() {
        let g = generator(vec![rule(ICM_TASK, None, json!({"user_intent": "x", "search_field": "content"}))]);
        let c = g.compile_icm_query(Q1, &[]).unwrap();
        assert_eq!(c.origin, QueryOrigin::Fallback);
        let g = generator(vec![]);
        assert_eq!(g.compile_icm_query(Q1, &[]).unwrap().origin, QueryOrigin::Fallback);
        assert!(matches!(g.compile_icm_query("  ", &[]), Err(QueryGenError::EmptyQuestion)));
    }

    #[test]
    fn tsg_queries_original_rephrased_and_hint() {
        let g = generator(vec![
            rule(TSG_TASK, None, json!({"rephrased_query": "restart gateway service"})),
            ScriptRule {
                task: Some(HINT_TASK.into()),
                pattern: None,
                scope: MatchScope::LastUser,
                reply: Reply::Text("Restart the gateway pods and check health probes".into()),
            },
        ]);
        let c = g.compile_tsg_query("how do I restart the gateway?", None).unwrap();
        assert_eq!(c.queries.len(), 2);
        assert!(c.queries.iter().all(|q| q.fields == [Field::Title, Field::Content] && q.method == SearchMethod::Hybrid));
        let c = g.compile_tsg_query("how do I restart the gateway?", Some("gateway returns 502")).unwrap();
        assert_eq!(c.queries.len(), 3);
        assert_eq!(c.queries[2].search_text, "Restart the gateway pods and check health probes");

        let c = g.compile_tsg_query("Restart Gateway Service", None).unwrap();
        assert_eq!(c.queries.len(), 1);
    }

    #[test]
    fn failed_hint_is_not_fatal() {
        let g = generator(vec![rule(TSG_TASK, None, json!({"rephrased_query": "r"}))]);
        let c = g.compile_tsg_query("q", Some("summary")).unwrap();
        assert_eq!(c.queries.len(), 2);
        assert!(matches!(g.generate_search_hint(""), Err(QueryGenError::EmptySummary)));
    }

    #[test]
    fn code_fields() {
        let g = generator(vec![
            rule(CODE_TASK, Some("defined"), json!({"search_text": "SOSScheduler", "search_fields": ["title", "content"]})),
            rule(CODE_TASK, Some("everything"), json!({"search_text": "x", "search_fields": ["All"]})),
        ]);
        let c = g.compile_code_query("where is class SOSScheduler defined?").unwrap();
        assert_eq!(c.queries[0].fields, [Field::Title, Field::Content]);
        let c = g.compile_code_query("everything about x").unwrap();
        assert_eq!(c.queries[0].fields.len(), 4);
        let c = g.compile_code_query("no rule here").unwrap();
        assert_eq!(c.origin, QueryOrigin::Fallback);
        assert_eq!(c.queries[0].fields.len(), 4);
    }

    #[test]
    fn prompt_carries_examples_and_truncated_history() {
        let g = generator(vec![]);
        let history: Vec<Message> = (0..10).map(|i| Message::user(format!("m{i}"))).collect();
        let msgs = g.messages(DocKind::Icm, ICM_PROMPT, &history, "q");
        assert_eq!(msgs.len(), 1 + 6 + 1);
        assert_eq!(msgs[1].content, "m4");
        assert!(msgs[0].content.contains("testserver1"));
        assert_eq!(msgs[0].content.matches("Question:").count(), 4);
    }

    #[test]
    fn bundled_fixtures_are_valid() {
        let f = FewShots::bundled();
        for kind in DocKind::ALL {
            assert!(!f.for_kind(kind).is_empty());
            for ex in f.for_kind(kind) {
                for q in &ex.expected.queries {
                    q.validate(kind).unwrap();
                }
            }
        }
    }
}
