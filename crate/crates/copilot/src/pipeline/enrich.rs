use std::collections::{BTreeMap, BTreeSet};

use copilot_core::helpfulness;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use super::ingest::ATTR_TITLE;
use super::{PipelineError, RawRecord};
use crate::provider::{CompletionRequest, Message, Provider, ResponseSchema, ValueKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentSummary {
    pub title: String,
    pub summary: String,
    pub mitigation: String,
    pub properties: BTreeMap<String, String>,
    pub helpfulness: f64,
}

impl IncidentSummary {
    /// Properties rendered as `key: value` lines.
    pub fn property_text(&self) -> String {
        self.properties.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n")
    }
}

pub fn compute_helpfulness(summary: &IncidentSummary, reference_tokens: usize) -> f64 {
    helpfulness(&summary.summary, &summary.mitigation, reference_tokens)
}

pub const SUMMARIZE_TASK: &str = "summarize_incident";
pub const ENRICH_TASK: &str = "enrich_code";

const SUMMARIZE_PROMPT: &str = "Summarize the incident report below. Return title, summary (what happened and
the impact), mitigation (the steps that resolved it, empty if none are recorded) and properties
(a record of identifiers such as server, region, monitor and service).";

const ENRICH_PROMPT: &str = "Describe the code segment below. Return title (the main class or function name),
description (one or two sentences on what it does), references (names of components it uses),
related_ids (ids from the component list that this code calls or is called by) and
reference_summaries (one sentence per reference).";

pub fn summary_schema() -> ResponseSchema {
    ResponseSchema::new(SUMMARIZE_TASK)
        .field("title", ValueKind::Text)
        .field("summary", ValueKind::Text)
        .optional("mitigation", ValueKind::Text)
        .optional("properties", ValueKind::Record)
}

pub fn enrich_schema() -> ResponseSchema {
    ResponseSchema::new(ENRICH_TASK)
        .field("title", ValueKind::Text)
        .field("description", ValueKind::Text)
        .optional("references", ValueKind::TextList)
        .optional("related_ids", ValueKind::TextList)
        .optional("reference_summaries", ValueKind::TextList)
}

/// Schema-constrained summary of an incident; one retry, then the record is
/// reported as skipped.
pub fn summarize_incident(
    record: &RawRecord,
    provider: &dyn Provider,
    reference_tokens: usize,
) -> Result<IncidentSummary, PipelineError> {
    let title = record.attributes.get(ATTR_TITLE).map(String::as_str).unwrap_or("");
    let req = CompletionRequest::new(
        SUMMARIZE_TASK,
        vec![
            Message::system(SUMMARIZE_PROMPT),
            Message::user(format!("Incident {}: {title}\n\n{}", record.id, record.body)),
        ],
    )
    .with_schema(summary_schema());
    let rec = provider.complete_record(&req).or_else(|e| {
        warn!(incident = %record.id, error = %e, "summary attempt failed, retrying");
        provider.complete_record(&req)
    });
    let rec = rec.map_err(|e| PipelineError::Skipped { id: record.id.clone(), reason: e.to_string() })?;
    let text = |k: &str| rec.get(k).and_then(Value::as_str).unwrap_or("").trim().to_string();
    let properties = rec
        .get("properties")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
                .collect()
        })
        .unwrap_or_default();
    let mut s = IncidentSummary {
        title: text("title"),
        summary: text("summary"),
        mitigation: text("mitigation"),
        properties,
        helpfulness: 0.0,
    };
    s.helpfulness = compute_helpfulness(&s, reference_tokens);
    Ok(s)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMetadata {
    pub title: String,
    pub description: String,
    pub references: Vec<String>,
    pub related_ids: Vec<String>,
    pub reference_summaries: Vec<String>,
}

impl CodeMetadata {
    /// Text stored in the `reference` field.
    pub fn reference_text(&self) -> String {
        self.references.iter().chain(&self.reference_summaries).cloned().collect::<Vec<_>>().join("\n")
    }
}

/// Title, description and references for one code segment. Related ids
/// outside `corpus` are dropped; a provider failure yields empty metadata.
pub fn enrich_code(
    segment_id: &str,
    segment: &str,
    catalog: &str,
    corpus: &BTreeSet<String>,
    provider: &dyn Provider,
) -> Result<CodeMetadata, PipelineError> {
    if segment.trim().is_empty() {
        return Err(PipelineError::EmptySegment(segment_id.to_string()));
    }
    let req = CompletionRequest::new(
        ENRICH_TASK,
        vec![
            Message::system(format!("{ENRICH_PROMPT}\n\nComponents:\n{catalog}")),
            Message::user(segment),
        ],
    )
    .with_schema(enrich_schema());
    let rec = match provider.complete_record(&req) {
        Ok(r) => r,
        Err(e) => {
            warn!(segment = segment_id, error = %e, "enrichment failed, indexing without metadata");
            return Ok(CodeMetadata::default());
        }
    };
    let list = |k: &str| -> Vec<String> {
        rec.get(k)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default()
    };
    let text = |k: &str| rec.get(k).and_then(Value::as_str).unwrap_or("").to_string();
    let mut related: Vec<String> = Vec::new();
    for id in list("related_ids") {
        if id != segment_id && corpus.contains(&id) && !related.contains(&id) {
            related.push(id);
        }
    }
    Ok(CodeMetadata {
        title: text("title"),
        description: text("description"),
        references: list("references"),
        related_ids: related,
        reference_summaries: list("reference_summaries"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{MatchScope, Reply, ScriptRule, ScriptedBehavior, ScriptedProvider};
    use copilot_core::DocKind;
    use serde_json::json;

    fn scripted(task: &str, reply: Value) -> ScriptedProvider {
        ScriptedProvider::new(ScriptedBehavior {
            rules: vec![ScriptRule {
                task: Some(task.into()),
                pattern: None,
                scope: MatchScope::LastUser,
                reply: Reply::Record(reply.as_object().unwrap().clone()),
            }],
            ..Default::default()
        })
        .unwrap()
    }

    fn incident() -> RawRecord {
        RawRecord {
            source: "sql".into(),
            kind: DocKind::Icm,
            id: "INC1".into(),
            body: "db down; restarted".into(),
            attributes: BTreeMap::from([(ATTR_TITLE.into(), "db down".into())]),
        }
    }

    #[test]
    fn summary_fields_and_helpfulness() {
        let p = scripted(SUMMARIZE_TASK, json!({
            "title": "Database outage",
            "summary": "primary db unavailable for ten minutes",
            "mitigation": "restarted the primary node",
            "properties": {"server": "db01", "retries": 3}
        }));
        let s = summarize_incident(&incident(), &p, 400).unwrap();
        assert_eq!(s.title, "Database outage");
        assert_eq!(s.properties["server"], "db01");
        assert_eq!(s.properties["retries"], "3");
        assert_eq!(s.helpfulness, 10.0 / 400.0);
        assert_eq!(s.property_text(), "retries: 3\nserver: db01");

        let p = scripted(SUMMARIZE_TASK, json!({"title": "Database outage", "summary": "primary db unavailable for ten minutes"}));
        let without = summarize_incident(&incident(), &p, 400).unwrap();
        assert_eq!(without.mitigation, "");
        assert!(without.helpfulness < s.helpfulness);
    }

    #[test]
    fn helpfulness_examples() {
        let mut s = IncidentSummary {
            title: String::new(),
            summary: String::new(),
            mitigation: String::new(),
            properties: BTreeMap::new(),
            helpfulness: 0.0,
        };
        assert_eq!(compute_helpfulness(&s, 400), 0.0);
        s.summary = vec!["w"; 150].join(" ");
        s.mitigation = vec!["w"; 50].join(" ");
        assert_eq!(compute_helpfulness(&s, 400), 0.5);
        s.mitigation = vec!["w"; 500].join(" ");
        assert_eq!(compute_helpfulness(&s, 400), 1.0);
    }

    #[test]
    fn summary_schema_violation_skips_record() {
        let p = scripted(SUMMARIZE_TASK, json!({"title": 5}));
        assert!(matches!(summarize_incident(&incident(), &p, 400), Err(PipelineError::Skipped { .. })));
    }

    #[test]
    fn enrichment_keeps_fields_and_restricts_related_ids() {
        let p = scripted(ENRICH_TASK, json!({
            "title": "SOSScheduler.run",
            "description": "runs queued jobs",
            "references": ["Queue"],
            "related_ids": ["queue.rs#0", "gone.rs#0", "sched.rs#0"]
        }));
        let corpus = BTreeSet::from(["queue.rs#0".to_string(), "sched.rs#0".to_string()]);
        let m = enrich_code("sched.rs#0", "fn run() {}", "", &corpus, &p).unwrap();
        assert_eq!(m.title, "SOSScheduler.run");
        assert_eq!(m.references, ["Queue"]);
        assert_eq!(m.related_ids, ["queue.rs#0"]);
        assert!(matches!(enrich_code("x", "  ", "", &corpus, &p), Err(PipelineError::EmptySegment(_))));

        let none = ScriptedProvider::new(ScriptedBehavior::default()).unwrap();
        assert_eq!(enrich_code("x", "fn a() {}", "", &corpus, &none).unwrap(), CodeMetadata::default());
    }
}
