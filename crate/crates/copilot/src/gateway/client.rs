//! Blocking client for the gateway, plus the client-side conversation state
//! every caller has to keep.

use std::io::{BufRead, BufReader};

use serde::de::DeserializeOwned;
use thiserror::Error;

use super::telemetry::StatsReport;
use super::FeedbackRequest;
use crate::orchestrator::{ChatRequest, ChatResponse, MetaPlan, PluginData, StreamEvent};
use crate::provider::Message;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("reading stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad event payload: {0}")]
    Event(#[from] serde_json::Error),
    #[error("server error {error_id}: {message}")]
    Round { error_id: String, message: String },
    #[error("stream ended before the round completed")]
    Truncated,
}

/// Conversation state held by the caller: full history, the echoed
/// meta-plan and the question being worked on.
#[derive(Debug, Clone, Default)]
pub struct ChatSession {
    pub tenant: String,
    pub user_id: String,
    pub session_id: String,
    pub messages: Vec<Message>,
    pub meta_plan: Option<MetaPlan>,
    pub question: String,
}

impl ChatSession {
    pub fn new(tenant: &str, user_id: &str, session_id: &str) -> Self {
        ChatSession { tenant: tenant.into(), user_id: user_id.into(), session_id: session_id.into(), ..Default::default() }
    }

    /// Starts a new question: appends it to the history and drops any
    /// finished plan.
    pub fn ask(&mut self, question: &str) -> ChatRequest {
        self.question = question.to_string();
        self.meta_plan = None;
        self.messages.push(Message::user(question));
        self.request(None)
    }

    /// The follow-up request after a round that did not terminate.
    pub fn next(&self) -> ChatRequest {
        self.request(None)
    }

    /// Sends reviewed plugin data back.
    pub fn submit(&self, data: PluginData) -> ChatRequest {
        self.request(Some(data))
    }

    fn request(&self, skill_data: Option<PluginData>) -> ChatRequest {
        ChatRequest {
            messages: self.messages.clone(),
            question: self.question.clone(),
            user_id: self.user_id.clone(),
            skill_data,
            meta_plan: self.meta_plan.clone(),
            tenant: self.tenant.clone(),
            session_id: Some(self.session_id.clone()).filter(|s| !s.is_empty()),
        }
    }

    /// Records a round's answer and plan.
    pub fn absorb(&mut self, resp: &ChatResponse) {
        if !resp.answer.trim().is_empty() {
            self.messages.push(Message::assistant(resp.answer.clone()));
        }
        self.meta_plan = Some(resp.planner_output.meta_plan.clone());
    }
}

#[derive(Debug, Clone)]
pub struct GatewayClient {
    base_url: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl GatewayClient {
    pub fn new(base_url: &str, token: Option<String>) -> Self {
        GatewayClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
            http: reqwest::blocking::Client::builder().timeout(None).build().expect("http client builds"),
        }
    }

    fn with_auth(&self, rb: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn checked(resp: reqwest::blocking::Response) -> Result<reqwest::blocking::Response, ClientError> {
        if resp.status().is_success() {
            Ok(resp)
        } else {
            let status = resp.status().as_u16();
            Err(ClientError::Status { status, body: resp.text().unwrap_or_default() })
        }
    }

    fn json<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, ClientError> {
        Ok(Self::checked(resp)?.json()?)
    }

    pub fn healthz(&self) -> Result<bool, ClientError> {
        Ok(self.http.get(format!("{}/v1/healthz", self.base_url)).send()?.status().is_success())
    }

    /// Runs one round, handing each streamed event to `on_event` as it
    /// arrives.
    pub fn chat(&self, req: &ChatRequest, mut on_event: impl FnMut(&StreamEvent)) -> Result<ChatResponse, ClientError> {
        let resp = self.with_auth(self.http.post(format!("{}/v1/chat", self.base_url))).json(req).send()?;
        let reader = BufReader::new(Self::checked(resp)?);
        let mut data = String::new();
        for line in reader.lines() {
            let line = line?;
            if let Some(d) = line.strip_prefix("data:") {
                if !data.is_empty() {
                    data.push('\n');
                }
                data.push_str(d.strip_prefix(' ').unwrap_or(d));
            } else if line.is_empty() && !data.is_empty() {
                let event: StreamEvent = serde_json::from_str(&data)?;
                data.clear();
                on_event(&event);
                match event {
                    StreamEvent::RoundComplete { response } => return Ok(response),
                    StreamEvent::Error { error_id, message } => return Err(ClientError::Round { error_id, message }),
                    _ => {}
                }
            }
        }
        Err(ClientError::Truncated)
    }

    /// Runs one round without streaming.
    pub fn chat_once(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        Self::json(self.with_auth(self.http.post(format!("{}/v1/chat?stream=false", self.base_url))).json(req).send()?)
    }

    pub fn feedback(&self, fb: &FeedbackRequest) -> Result<(), ClientError> {
        Self::checked(self.with_auth(self.http.post(format!("{}/v1/feedback", self.base_url))).json(fb).send()?)?;
        Ok(())
    }

    pub fn stats(&self, tenant: &str) -> Result<StatsReport, ClientError> {
        Self::json(self.with_auth(self.http.get(format!("{}/v1/stats?tenant={tenant}", self.base_url))).send()?)
    }
}
