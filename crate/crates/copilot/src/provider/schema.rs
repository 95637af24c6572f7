use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Integer,
    Number,
    Boolean,
    TextList,
    Record,
    RecordList,
}

impl ValueKind {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ValueKind::Text => v.is_string(),
            ValueKind::Integer => v.is_i64() || v.is_u64(),
            ValueKind::Number => v.is_number(),
            ValueKind::Boolean => v.is_boolean(),
            ValueKind::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            ValueKind::Record => v.is_object(),
            ValueKind::RecordList => v.as_array().is_some_and(|a| a.iter().all(Value::is_object)),
        }
    }

    fn json_schema(self) -> Value {
        match self {
            ValueKind::Text => json!({"type": "string"}),
            ValueKind::Integer => json!({"type": "integer"}),
            ValueKind::Number => json!({"type": "number"}),
            ValueKind::Boolean => json!({"type": "boolean"}),
            ValueKind::TextList => json!({"type": "array", "items": {"type": "string"}}),
            ValueKind::Record => json!({"type": "object"}),
            ValueKind::RecordList => json!({"type": "array", "items": {"type": "object"}}),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    pub kind: ValueKind,
    #[serde(default = "yes")]
    pub required: bool,
}

fn yes() -> bool {
    true
}

/// Named output record shape used to constrain a completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSchema {
    pub name: String,
    pub fields: Vec<SchemaField>,
}

impl ResponseSchema {
    pub fn new(name: impl Into<String>) -> Self {
        ResponseSchema { name: name.into(), fields: Vec::new() }
    }

    pub fn field(mut self, name: &str, kind: ValueKind) -> Self {
        self.fields.push(SchemaField { name: name.into(), kind, required: true });
        self
    }

    pub fn optional(mut self, name: &str, kind: ValueKind) -> Self {
        self.fields.push(SchemaField { name: name.into(), kind, required: false });
        self
    }

    fn violation(&self, reason: impl Into<String>) -> ProviderError {
        ProviderError::SchemaViolation { schema: self.name.clone(), reason: reason.into() }
    }

    /// Checks a parsed value; extra keys are allowed, optional keys may be null.
    pub fn check(&self, value: &Value) -> Result<Map<String, Value>, ProviderError> {
        let obj = value.as_object().ok_or_else(|| self.violation("output is not a record"))?;
        for f in &self.fields {
            match obj.get(&f.name) {
                None | Some(Value::Null) if !f.required => {}
                None => return Err(self.violation(format!("missing field `{}`", f.name))),
                Some(v) if !f.kind.accepts(v) => {
                    return Err(self.violation(format!("field `{}` is not {:?}", f.name, f.kind)))
                }
                Some(_) => {}
            }
        }
        Ok(obj.clone())
    }

    /// Parses model text as JSON, tolerating a surrounding code fence.
    pub fn check_text(&self, text: &str) -> Result<Map<String, Value>, ProviderError> {
        let trimmed = text.trim();
        let body = trimmed
            .strip_prefix("```json")
            .or_else(|| trimmed.strip_prefix("```"))
            .and_then(|t| t.strip_suffix("```"))
            .unwrap_or(trimmed);
        let value: Value = serde_json::from_str(body.trim())
            .map_err(|e| self.violation(format!("not a JSON record: {e}")))?;
        self.check(&value)
    }

    /// JSON-schema form for endpoints that support structured output.
    pub fn to_json_schema(&self) -> Value {
        let props: Map<String, Value> = self
            .fields
            .iter()
            .map(|f| (f.name.clone(), f.kind.json_schema()))
            .collect();
        let required: Vec<&str> = self
            .fields
            .iter()
            .filter(|f| f.required)
            .map(|f| f.name.as_str())
            .collect();
        json!({"type": "object", "properties": props, "required": required})
    }
}
