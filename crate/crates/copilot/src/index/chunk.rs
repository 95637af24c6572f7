use std::collections::BTreeMap;

use chrono::NaiveDate;
use copilot_core::{DateKind, DocKind, Field, TicketType};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One indexed unit of a TSG, incident or code corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub id: String,
    pub source: String,
    pub kind: DocKind,
    pub fields: BTreeMap<Field, String>,
    #[serde(default)]
    pub dates: BTreeMap<DateKind, NaiveDate>,
    #[serde(default)]
    pub ticket_type: TicketType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpfulness: Option<f64>,
    #[serde(default)]
    pub embeddings: BTreeMap<Field, Vec<f32>>,
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

/// `extras` key holding comma-separated ids of one-hop related code chunks.
pub const RELATED_IDS: &str = "related_ids";
/// `extras` key holding a document URL or path.
pub const URL: &str = "url";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChunkError {
    #[error("chunk id is empty")]
    EmptyId,
    #[error("chunk `{id}`: field `{field}` has an embedding but no text")]
    EmbeddingWithoutText { id: String, field: Field },
    #[error("chunk `{id}`: helpfulness {value} outside [0, 1]")]
    Helpfulness { id: String, value: f64 },
}

impl DocumentChunk {
    pub fn new(id: impl Into<String>, source: impl Into<String>, kind: DocKind) -> Self {
        DocumentChunk {
            id: id.into(),
            source: source.into(),
            kind,
            fields: BTreeMap::new(),
            dates: BTreeMap::new(),
            ticket_type: TicketType::None,
            helpfulness: None,
            embeddings: BTreeMap::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn with_field(mut self, field: Field, text: impl Into<String>) -> Self {
        self.fields.insert(field, text.into());
        self
    }

    pub fn text(&self, field: Field) -> &str {
        self.fields.get(&field).map_or("", String::as_str)
    }

    pub fn related_ids(&self) -> Vec<&str> {
        self.extras
            .get(RELATED_IDS)
            .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.id.trim().is_empty() {
            return Err(ChunkError::EmptyId);
        }
        for field in self.embeddings.keys() {
            if self.text(*field).is_empty() {
                return Err(ChunkError::EmbeddingWithoutText { id: self.id.clone(), field: *field });
            }
        }
        if let Some(h) = self.helpfulness {
            if !(0.0..=1.0).contains(&h) {
                return Err(ChunkError::Helpfulness { id: self.id.clone(), value: h });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let c = DocumentChunk::new("a", "s", DocKind::Tsg).with_field(Field::Title, "t");
        assert!(c.validate().is_ok());

        let mut bad = c.clone();
        bad.embeddings.insert(Field::Content, vec![1.0]);
        assert!(matches!(bad.validate(), Err(ChunkError::EmbeddingWithoutText { .. })));

        let mut bad = c.clone();
        bad.helpfulness = Some(1.5);
        assert!(bad.validate().is_err());

        assert_eq!(DocumentChunk::new(" ", "s", DocKind::Tsg).validate(), Err(ChunkError::EmptyId));
    }

    #[test]
    fn json_field_names() {
        let mut c = DocumentChunk::new("a", "s", DocKind::Icm).with_field(Field::Mitigation, "m");
        c.dates.insert(DateKind::ResolveDate, NaiveDate::from_ymd_opt(2024, 5, 1).unwrap());
        c.ticket_type = TicketType::Cri;
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["fields"]["mitigation"], "m");
        assert_eq!(v["dates"]["resolve_date"], "2024-05-01");
        assert_eq!(v["ticket_type"], "CRI");
        assert_eq!(v["kind"], "icm");
        let back: DocumentChunk = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn related_ids_parse() {
        let mut c = DocumentChunk::new("a", "s", DocKind::Code);
        c.extras.insert(RELATED_IDS.into(), "x, y,,z".into());
        assert_eq!(c.related_ids(), vec!["x", "y", "z"]);
    }
}
