//! Shared vocabulary: indexed fields, corpus kinds, date kinds, ticket types
//! and the structured search query.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A named, indexed text field of a document chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Content,
    Summary,
    Description,
    Reference,
    Mitigation,
    Property,
}

impl Field {
    pub const ALL: [Field; 7] = [
        Field::Title,
        Field::Content,
        Field::Summary,
        Field::Description,
        Field::Reference,
        Field::Mitigation,
        Field::Property,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Title => "title",
            Field::Content => "content",
            Field::Summary => "summary",
            Field::Description => "description",
            Field::Reference => "reference",
            Field::Mitigation => "mitigation",
            Field::Property => "property",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} `{value}`")]
pub struct ParseNameError {
    pub what: &'static str,
    pub value: String,
}

impl FromStr for Field {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // "contents" shows up in prompts and few-shot files
        let s = s.trim().to_ascii_lowercase();
        let field = match s.as_str() {
            "title" => Field::Title,
            "content" | "contents" => Field::Content,
            "summary" => Field::Summary,
            "description" => Field::Description,
            "reference" | "references" => Field::Reference,
            "mitigation" => Field::Mitigation,
            "property" | "properties" => Field::Property,
            _ => {
                return Err(ParseNameError {
                    what: "field",
                    value: s,
                })
            }
        };
        Ok(field)
    }
}

/// Which corpus a chunk belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Tsg,
    Icm,
    Code,
}

impl DocKind {
    pub const ALL: [DocKind; 3] = [DocKind::Tsg, DocKind::Icm, DocKind::Code];

    /// Fields that a query against this corpus may target.
    pub fn searchable_fields(self) -> &'static [Field] {
        match self {
            DocKind::Tsg => &[Field::Title, Field::Content],
            DocKind::Icm => &[Field::Summary, Field::Title, Field::Property, Field::Mitigation],
            DocKind::Code => &[
                Field::Title,
                Field::Description,
                Field::Content,
                Field::Reference,
            ],
        }
    }

    /// Fields used when nothing better is known about the question.
    pub fn default_fields(self) -> &'static [Field] {
        match self {
            DocKind::Tsg => &[Field::Title, Field::Content],
            DocKind::Icm => &[Field::Summary, Field::Title],
            DocKind::Code => self.searchable_fields(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::Tsg => "tsg",
            DocKind::Icm => "icm",
            DocKind::Code => "code",
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocKind {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsg" => Ok(DocKind::Tsg),
            "icm" => Ok(DocKind::Icm),
            "code" => Ok(DocKind::Code),
            other => Err(ParseNameError {
                what: "document kind",
                value: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateKind {
    CreateDate,
    ResolveDate,
    ModifiedDate,
}

impl DateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DateKind::CreateDate => "create_date",
            DateKind::ResolveDate => "resolve_date",
            DateKind::ModifiedDate => "modified_date",
        }
    }
}

impl FromStr for DateKind {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(' ', "_").as_str() {
            "create_date" => Ok(DateKind::CreateDate),
            "resolve_date" => Ok(DateKind::ResolveDate),
            "modified_date" => Ok(DateKind::ModifiedDate),
            other => Err(ParseNameError {
                what: "date kind",
                value: other.into(),
            }),
        }
    }
}

/// Ticket type stored on an incident chunk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TicketType {
    #[serde(rename = "LSI")]
    Lsi,
    #[serde(rename = "CRI")]
    Cri,
    #[default]
    #[serde(rename = "NONE")]
    None,
}

impl FromStr for TicketType {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LSI" => Ok(TicketType::Lsi),
            "CRI" => Ok(TicketType::Cri),
            "NONE" | "" => Ok(TicketType::None),
            other => Err(ParseNameError {
                what: "ticket type",
                value: other.into(),
            }),
        }
    }
}

/// Ticket type restriction carried by a query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TicketFilter {
    #[serde(rename = "LSI")]
    Lsi,
    #[serde(rename = "CRI")]
    Cri,
    #[default]
    #[serde(rename = "ALL")]
    All,
}

impl TicketFilter {
    pub fn admits(self, ticket: TicketType) -> bool {
        match self {
            TicketFilter::All => true,
            TicketFilter::Lsi => ticket == TicketType::Lsi,
            TicketFilter::Cri => ticket == TicketType::Cri,
        }
    }
}

impl FromStr for TicketFilter {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LSI" => Ok(TicketFilter::Lsi),
            "CRI" => Ok(TicketFilter::Cri),
            "ALL" => Ok(TicketFilter::All),
            other => Err(ParseNameError {
                what: "ticket filter",
                value: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    #[default]
    Hybrid,
    Vector,
    Simple,
    Semantic,
}

impl FromStr for SearchMethod {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hybrid" => Ok(SearchMethod::Hybrid),
            "vector" => Ok(SearchMethod::Vector),
            "simple" => Ok(SearchMethod::Simple),
            "semantic" => Ok(SearchMethod::Semantic),
            other => Err(ParseNameError {
                what: "search method",
                value: other.into(),
            }),
        }
    }
}

/// A compiled, executable search request against one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub search_text: String,
    pub fields: Vec<Field>,
    #[serde(default)]
    pub method: SearchMethod,
    /// Date kind to maximum age in days.
    #[serde(default)]
    pub time_filters: BTreeMap<DateKind, u32>,
    #[serde(default)]
    pub ticket_type: TicketFilter,
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("search text is empty")]
    EmptyText,
    #[error("query names no fields")]
    NoFields,
    #[error("field `{field}` is not searchable in the {kind} index")]
    FieldNotIndexed { field: Field, kind: DocKind },
    #[error("top_n must be at least 1")]
    ZeroTopN,
}

impl SearchQuery {
    pub fn new(search_text: impl Into<String>, fields: Vec<Field>, top_n: usize) -> Self {
        SearchQuery {
            search_text: search_text.into(),
            fields,
            method: SearchMethod::Hybrid,
            time_filters: BTreeMap::new(),
            ticket_type: TicketFilter::All,
            top_n,
        }
    }

    /// Checks the query against the field set of `kind`.
    pub fn validate(&self, kind: DocKind) -> Result<(), QueryError> {
        if self.search_text.trim().is_empty() {
            return Err(QueryError::EmptyText);
        }
        if self.fields.is_empty() {
            return Err(QueryError::NoFields);
        }
        if self.top_n == 0 {
            return Err(QueryError::ZeroTopN);
        }
        let allowed = kind.searchable_fields();
        if let Some(&field) = self.fields.iter().find(|f| !allowed.contains(f)) {
            return Err(QueryError::FieldNotIndexed { field, kind });
        }
        Ok(())
    }
}
