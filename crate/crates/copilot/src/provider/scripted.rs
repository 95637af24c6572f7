//! Deterministic rule-table provider.
//!
//! Rules are tried in order; the first whose task and pattern match the
//! request supplies the reply. Embeddings are hashed bag-of-terms
//! projections, so similar wording gives similar vectors.

use std::path::Path;

use copilot_core::vector::hashed_projection;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Completion, CompletionRequest, EmbeddingVector, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reply {
    Text(String),
    Record(Map<String, Value>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchScope {
    /// The last user message.
    #[default]
    LastUser,
    /// Every message, joined.
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Restricts the rule to requests with this task label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Case-insensitive regex; absent means "any".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default)]
    pub scope: MatchScope,
    pub reply: Reply,
}

fn default_dimension() -> usize {
    256
}

fn default_model() -> String {
    "hashed-terms".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBehavior {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Reply>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_model")]
    pub model_id: String,
}

impl Default for ScriptedBehavior {
    fn default() -> Self {
        ScriptedBehavior {
            rules: Vec::new(),
            default: None,
            dimension: default_dimension(),
            model_id: default_model(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("rule {index}: bad pattern: {source}")]
    Pattern {
        index: usize,
        #[source]
        source: regex::Error,
    },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing script {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

struct CompiledRule {
    rule: ScriptRule,
    regex: Option<Regex>,
}

pub struct ScriptedProvider {
    rules: Vec<CompiledRule>,
    default: Option<Reply>,
    dimension: usize,
    model_id: String,
}

impl std::fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedProvider")
            .field("rules", &self.rules.len())
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl ScriptedProvider {
    pub fn new(behavior: ScriptedBehavior) -> Result<Self, ScriptError> {
        if behavior.dimension == 0 {
            return Err(ScriptError::ZeroDimension);
        }
        let rules = behavior
            .rules
            .into_iter()
            .enumerate()
            .map(|(index, rule)| {
                let regex = rule
                    .pattern
                    .as_deref()
                    .map(|p| RegexBuilder::new(p).case_insensitive(true).build())
                    .transpose()
                    .map_err(|source| ScriptError::Pattern { index, source })?;
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedProvider {
            rules,
            default: behavior.default,
            dimension: behavior.dimension,
            model_id: behavior.model_id,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: shown.clone(),
            source,
        })?;
        let behavior: ScriptedBehavior =
            serde_json::from_str(&text).map_err(|source| ScriptError::Parse { path: shown, source })?;
        Self::new(behavior)
    }

    fn matching_reply(&self, req: &CompletionRequest) -> Option<&Reply> {
        let prompt = req.prompt_text();
        let last_user = req.last_user().unwrap_or("");
        self.rules
            .iter()
            .find(|c| {
                if c.rule.task.as_deref().is_some_and(|t| t != req.task) {
                    return false;
                }
                let haystack = match c.rule.scope {
                    MatchScope::LastUser => last_user,
                    MatchScope::Prompt => prompt.as_str(),
                };
                c.regex.as_ref().is_none_or(|r| r.is_match(haystack))
            })
            .map(|c| &c.rule.reply)
            .or(self.default.as_ref())
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        request.validate()?;
        let reply = self
            .matching_reply(request)
            .ok_or_else(|| ProviderError::NoRuleMatched { task: request.task.clone() })?;
        match (&request.response_schema, reply) {
            (None, Reply::Text(t)) => Ok(Completion::Text(t.clone())),
            (None, Reply::Record(r)) => Ok(Completion::Record(r.clone())),
            (Some(schema), Reply::Text(t)) => schema.check_text(t).map(Completion::Record),
            (Some(schema), Reply::Record(r)) => {
                schema.check(&Value::Object(r.clone())).map(Completion::Record)
            }
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        Ok(EmbeddingVector {
            values: hashed_projection(text, self.dimension),
            model_id: self.model_id.clone(),
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
