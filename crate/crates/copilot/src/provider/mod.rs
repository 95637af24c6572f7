//! Text-completion and embedding providers.
//!
//! Every model call in the engine goes through [`Provider`]. Two
//! implementations ship: [`ScriptedProvider`], a deterministic rule table for
//! tests and desk-scale demos, and [`HttpProvider`] for an external
//! chat-completion / embedding endpoint.

mod http;
mod schema;
mod scripted;

pub use http::{HttpProvider, HttpProviderConfig};
pub use schema::{ResponseSchema, SchemaField, ValueKind};
pub use scripted::{MatchScope, Reply, ScriptRule, ScriptedBehavior, ScriptedProvider};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Short label for the call site ("plan_agents", "icm_query", ...). Used
    /// for logging and by scripted rules.
    pub task: String,
    pub messages: Vec<Message>,
    pub response_schema: Option<ResponseSchema>,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(task: impl Into<String>, messages: Vec<Message>) -> Self {
        CompletionRequest {
            task: task.into(),
            messages,
            response_schema: None,
            temperature: 0.0,
        }
    }

    pub fn with_schema(mut self, schema: ResponseSchema) -> Self {
        self.response_schema = Some(schema);
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// All message contents joined by newlines.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    Text(String),
    Record(Map<String, Value>),
}

impl Completion {
    pub fn into_text(self) -> String {
        match self {
            Completion::Text(t) => t,
            Completion::Record(r) => Value::Object(r).to_string(),
        }
    }

    pub fn into_record(self) -> Option<Map<String, Value>> {
        match self {
            Completion::Record(r) => Some(r),
            Completion::Text(t) => match serde_json::from_str(&t) {
                Ok(Value::Object(m)) => Some(m),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_id: String,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint returned {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("output violates schema `{schema}`: {reason}")]
    SchemaViolation { schema: String, reason: String },
    #[error("no scripted rule matched task `{task}` and no default is configured")]
    NoRuleMatched { task: String },
    #[error("embedding has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("api key variable `{0}` is not set")]
    MissingApiKey(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    fn model_id(&self) -> &str;

    /// Constant for the lifetime of the provider.
    fn dimension(&self) -> usize;

    /// Completion that must come back as a record conforming to `schema`.
    fn complete_record(
        &self,
        request: &CompletionRequest,
    ) -> Result<Map<String, Value>, ProviderError> {
        let out = self.complete(request)?;
        let schema_name = request
            .response_schema
            .as_ref()
            .map_or("record", |s| s.name.as_str());
        out.into_record().ok_or_else(|| ProviderError::SchemaViolation {
            schema: schema_name.to_string(),
            reason: "completion is not a record".into(),
        })
    }
}
