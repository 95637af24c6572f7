//! HTTP front door for chat rounds.
//!
//! `POST /v1/chat` streams one round as server-sent events (or returns the
//! final response as JSON with `?stream=false`), `POST /v1/feedback` records
//! star ratings, `GET /v1/stats` aggregates the tenant's telemetry log and
//! `GET /v1/healthz` answers liveness probes. The server keeps no session
//! state; every request carries the conversation it belongs to.

pub mod client;
pub mod telemetry;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{error, info, warn};

use crate::provider::Role;
use crate::orchestrator::{ChatRequest, ChatResponse, Orchestrator, OrchestratorError, RoundResult, StreamEvent};
pub use telemetry::{compute_stats, read_events, StatsReport, TelemetryEvent, TelemetryKind, TelemetrySink};

/// One tenant served by the gateway.
pub struct TenantRuntime {
    pub orchestrator: Arc<Orchestrator>,
    pub token: Option<String>,
    pub telemetry: Arc<TelemetrySink>,
    pub conversation_detail: bool,
}

#[derive(Clone)]
pub struct AppState {
    tenants: Arc<BTreeMap<String, TenantRuntime>>,
}

impl AppState {
    pub fn new(tenants: BTreeMap<String, TenantRuntime>) -> Self {
        AppState { tenants: Arc::new(tenants) }
    }

    /// The named tenant, or the only one when `name` is empty.
    fn tenant(&self, name: &str) -> Result<(&str, &TenantRuntime), ApiError> {
        if name.is_empty() && self.tenants.len() == 1 {
            let (n, t) = self.tenants.iter().next().expect("one tenant");
            return Ok((n, t));
        }
        self.tenants
            .get_key_value(name)
            .map(|(n, t)| (n.as_str(), t))
            .ok_or_else(|| ApiError::bad_request(format!("unknown tenant `{name}`")))
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, body: ErrorBody { error: msg.into(), error_id: None } }
    }

    fn unauthorized() -> Self {
        ApiError { status: StatusCode::UNAUTHORIZED, body: ErrorBody { error: "missing or invalid bearer token".into(), error_id: None } }
    }

    fn internal(err: &dyn std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        error!(error_id = %id, error = %err, "request failed");
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, body: ErrorBody { error: "internal error".into(), error_id: Some(id) } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn authorize(headers: &HeaderMap, tenant: &TenantRuntime) -> Result<(), ApiError> {
    let Some(expected) = &tenant.token else { return Ok(()) };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    if presented == Some(expected.as_str()) {
        Ok(())
    } else {
        Err(ApiError::unauthorized())
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/feedback", post(feedback))
        .route("/v1/stats", get(stats))
        .route("/v1/healthz", get(|| async { "ok" }))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
struct ChatParams {
    stream: Option<bool>,
}

fn session_of(req: &ChatRequest) -> String {
    req.session_id.clone().filter(|s| !s.is_empty()).unwrap_or_else(|| {
        if req.user_id.is_empty() { "anonymous".into() } else { req.user_id.clone() }
    })
}

fn log(sink: &TelemetrySink, event: TelemetryEvent) {
    if let Err(e) = sink.append(&event) {
        warn!(error = %e, kind = ?event.kind, "telemetry append failed");
    }
}

/// Telemetry for a finished round: one `conversation_stat` always, a
/// `login` when a conversation starts and the full text when enabled.
pub fn record_round(
    tenant_name: &str,
    sink: &TelemetrySink,
    conversation_detail: bool,
    req: &ChatRequest,
    outcome: Result<&RoundResult, &str>,
    started: Instant,
) {
    let session = session_of(req);
    let new_question = req.meta_plan.is_none() && req.skill_data.is_none();
    let prior = match req.messages.split_last() {
        Some((last, rest)) if last.role == Role::User && last.content.trim() == req.question.trim() => rest,
        _ => &req.messages[..],
    };
    if new_question && prior.is_empty() {
        log(sink, TelemetryEvent::new(TelemetryKind::Login, tenant_name, &session, &req.user_id, json!({})));
    }
    let payload = match outcome {
        Ok(r) => json!({
            "status": "ok",
            "new_question": new_question,
            "agent": r.agent,
            "round": r.meta_plan.round,
            "terminated": r.terminated,
        }),
        Err(id) => json!({"status": "error", "new_question": new_question, "error_id": id}),
    };
    let mut stat = TelemetryEvent::new(TelemetryKind::ConversationStat, tenant_name, &session, &req.user_id, payload);
    stat.latency_ms = Some(started.elapsed().as_millis() as u64);
    log(sink, stat);
    if let (true, Ok(r)) = (conversation_detail, outcome) {
        let detail = json!({"question": req.question, "answer": r.agent_output, "agent": r.agent});
        log(sink, TelemetryEvent::new(TelemetryKind::ConversationDetail, tenant_name, &session, &req.user_id, detail));
    }
}

fn sse_event(e: &StreamEvent) -> Event {
    let data = serde_json::to_string(e).expect("stream events serialize");
    Event::default().event(e.name()).data(data)
}

async fn chat(State(state): State<AppState>, Query(params): Query<ChatParams>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: ChatRequest = parse_body(&body)?;
    let (name, tenant) = state.tenant(&req.tenant)?;
    authorize(&headers, tenant)?;
    tenant.orchestrator.check_request(&req).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let name = name.to_string();
    let started = Instant::now();

    if params.stream == Some(false) {
        let st = state.clone();
        let result = tokio::task::spawn_blocking(move || {
            let tenant = &st.tenants[&name];
            let out = tenant.orchestrator.run_round(&req);
            finish(&name, tenant, &req, out, started)
        })
        .await
        .map_err(|e| ApiError::internal(&e))??;
        return Ok(Json(ChatResponse::from(result)).into_response());
    }

    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<StreamEvent>();
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let tenant = &st.tenants[&name];
        // a closed channel means the client went away; the round still
        // completes and is logged
        let out = tenant.orchestrator.run_round_streaming(&req, &|e| {
            let _ = tx.send(e);
        });
        if let Err(e) = finish(&name, tenant, &req, out, started) {
            let _ = tx.send(StreamEvent::Error {
                error_id: e.body.error_id.unwrap_or_default(),
                message: e.body.error,
            });
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|e| (Ok::<_, Infallible>(sse_event(&e)), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

fn finish(
    name: &str,
    tenant: &TenantRuntime,
    req: &ChatRequest,
    out: Result<RoundResult, OrchestratorError>,
    started: Instant,
) -> Result<RoundResult, ApiError> {
    match out {
        Ok(r) => {
            record_round(name, &tenant.telemetry, tenant.conversation_detail, req, Ok(&r), started);
            info!(tenant = name, agent = ?r.agent, terminated = r.terminated, ms = started.elapsed().as_millis() as u64, "round complete");
            Ok(r)
        }
        Err(e) => {
            let err = ApiError::internal(&e);
            record_round(name, &tenant.telemetry, tenant.conversation_detail, req, Err(err.body.error_id.as_deref().unwrap_or("")), started);
            Err(err)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    #[serde(default)]
    pub tenant: String,
    #[serde(default)]
    pub user_id: String,
    #[serde(default)]
    pub session_id: String,
    pub stars: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

async fn feedback(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Json<Value>, ApiError> {
    let fb: FeedbackRequest = parse_body(&body)?;
    let (name, tenant) = state.tenant(&fb.tenant)?;
    authorize(&headers, tenant)?;
    if !(1..=5).contains(&fb.stars) {
        return Err(ApiError::bad_request(format!("stars must be between 1 and 5, got {}", fb.stars)));
    }
    let sink = &tenant.telemetry;
    log(sink, TelemetryEvent::new(TelemetryKind::FeedbackStars, name, &fb.session_id, &fb.user_id, json!({ "stars": fb.stars })));
    if let Some(text) = fb.text.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
        log(sink, TelemetryEvent::new(TelemetryKind::FeedbackText, name, &fb.session_id, &fb.user_id, json!({ "text": text })));
    }
    Ok(Json(json!({"ok": true})))
}

#[derive(Debug, Default, Deserialize)]
struct StatsParams {
    #[serde(default)]
    tenant: String,
    since: Option<DateTime<Utc>>,
    until: Option<DateTime<Utc>>,
}

async fn stats(State(state): State<AppState>, Query(p): Query<StatsParams>, headers: HeaderMap) -> Result<Json<StatsReport>, ApiError> {
    let (_, tenant) = state.tenant(&p.tenant)?;
    authorize(&headers, tenant)?;
    let path = tenant.telemetry.path().to_path_buf();
    let events = tokio::task::spawn_blocking(move || read_events(&path))
        .await
        .map_err(|e| ApiError::internal(&e))?
        .map_err(|e| ApiError::internal(&e))?;
    Ok(Json(compute_stats(&events, p.since, p.until)))
}

/// Serves until ctrl-c or SIGTERM.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    info!("shutting down");
}
