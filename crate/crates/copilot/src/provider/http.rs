//! Client for an OpenAI-style `/chat/completions` + `/embeddings` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{Completion, CompletionRequest, EmbeddingVector, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub dimension: usize,
    pub timeout_secs: u64,
    /// Extra attempts after a transport failure or 5xx.
    pub max_retries: u32,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        HttpProviderConfig {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: "COPILOT_API_KEY".into(),
            chat_model: "chat-model".into(),
            embedding_model: "embedding-model".into(),
            dimension: 1536,
            timeout_secs: 60,
            max_retries: 2,
        }
    }
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider").field("base_url", &self.config.base_url).finish()
    }
}

impl HttpProvider {
    /// Reads the API key from the configured variable; a missing key is only
    /// an error if the endpoint rejects the unauthenticated call.
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        Ok(HttpProvider { config, api_key, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut last_err = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                debug!(attempt, path, "retrying provider call");
            }
            let mut req = self.client.post(self.url(path)).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => last_err = Some(ProviderError::Unreachable(e.to_string())),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| ProviderError::Malformed(e.to_string()))?;
                    if status.is_server_error() {
                        last_err = Some(ProviderError::Http { status: status.as_u16(), body: text });
                        continue;
                    }
                    if !status.is_success() {
                        if status.as_u16() == 401 && self.api_key.is_none() {
                            return Err(ProviderError::MissingApiKey(self.config.api_key_env.clone()));
                        }
                        return Err(ProviderError::Http { status: status.as_u16(), body: text });
                    }
                    return serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()));
                }
            }
        }
        Err(last_err.unwrap_or_else(|| ProviderError::Unreachable("no attempt made".into())))
    }

    fn chat_once(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.config.chat_model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(schema) = &request.response_schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": schema.name, "schema": schema.to_json_schema()},
            });
        }
        let resp = self.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        request.validate()?;
        let Some(schema) = &request.response_schema else {
            return self.chat_once(request).map(Completion::Text);
        };
        // one retry when the model ignores the schema
        let first = self.chat_once(request)?;
        match schema.check_text(&first) {
            Ok(rec) => Ok(Completion::Record(rec)),
            Err(e) => {
                warn!(task = %request.task, error = %e, "schema violation, retrying once");
                let second = self.chat_once(request)?;
                schema.check_text(&second).map(Completion::Record)
            }
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let resp = self.post(
            "embeddings",
            &json!({"model": self.config.embedding_model, "input": text}),
        )?;
        let values: Vec<f32> = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Malformed("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().map(|x| x as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| ProviderError::Malformed("non-numeric embedding".into()))?;
        if values.len() != self.config.dimension {
            return Err(ProviderError::DimensionMismatch {
                expected: self.config.dimension,
                got: values.len(),
            });
        }
        Ok(EmbeddingVector { values, model_id: self.config.embedding_model.clone() })
    }

    fn model_id(&self) -> &str {
        &self.config.embedding_model
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }
}
