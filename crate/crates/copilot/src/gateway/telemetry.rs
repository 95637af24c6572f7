use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelemetryKind {
    Login,
    ConversationStat,
    FeedbackStars,
    FeedbackText,
    ConversationDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub kind: TelemetryKind,
    pub timestamp: DateTime<Utc>,
    pub tenant: String,
    pub session_id: String,
    #[serde(default)]
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub payload: Value,
}

impl TelemetryEvent {
    pub fn new(kind: TelemetryKind, tenant: &str, session_id: &str, user_id: &str, payload: Value) -> Self {
        TelemetryEvent {
            kind,
            timestamp: Utc::now(),
            tenant: tenant.into(),
            session_id: session_id.into(),
            user_id: user_id.into(),
            latency_ms: None,
            payload,
        }
    }
}

/// Append-only line-delimited event log for one tenant.
#[derive(Debug)]
pub struct TelemetrySink {
    path: PathBuf,
    file: Mutex<File>,
}

impl TelemetrySink {
    pub fn open(dir: &Path, tenant: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{tenant}.jsonl"));
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(TelemetrySink { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &TelemetryEvent) -> std::io::Result<()> {
        let mut line = serde_json::to_string(event).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()
    }
}

/// Reads a log, skipping lines that do not parse. A missing file is empty.
pub fn read_events(path: &Path) -> std::io::Result<Vec<TelemetryEvent>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(e) => out.push(e),
            Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable telemetry line"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyPercentiles {
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sessions: usize,
    /// User questions that started a conversation turn.
    pub messages: usize,
    pub rounds: usize,
    pub failed_rounds: usize,
    pub avg_rounds_per_session: f64,
    pub avg_stars: f64,
    pub feedback_count: usize,
    pub latency_ms: LatencyPercentiles,
    pub logins: usize,
}

/// Nearest-rank percentile of sorted values; 0 when empty.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Aggregates events with timestamps in `[since, until)`.
pub fn compute_stats(events: &[TelemetryEvent], since: Option<DateTime<Utc>>, until: Option<DateTime<Utc>>) -> StatsReport {
    let in_window = |e: &&TelemetryEvent| since.is_none_or(|s| e.timestamp >= s) && until.is_none_or(|u| e.timestamp < u);
    let mut sessions: BTreeSet<&str> = BTreeSet::new();
    let mut rounds_by_session: BTreeMap<&str, usize> = BTreeMap::new();
    let mut latencies = Vec::new();
    let mut report = StatsReport::default();
    let mut stars = Vec::new();
    for e in events.iter().filter(in_window) {
        match e.kind {
            TelemetryKind::ConversationStat => {
                sessions.insert(&e.session_id);
                *rounds_by_session.entry(&e.session_id).or_default() += 1;
                report.rounds += 1;
                if e.payload.get("new_question").and_then(Value::as_bool).unwrap_or(false) {
                    report.messages += 1;
                }
                if e.payload.get("status").and_then(Value::as_str) == Some("error") {
                    report.failed_rounds += 1;
                }
                latencies.extend(e.latency_ms);
            }
            TelemetryKind::FeedbackStars => {
                if let Some(s) = e.payload.get("stars").and_then(Value::as_u64) {
                    stars.push(s as f64);
                }
            }
            TelemetryKind::Login => report.logins += 1,
            TelemetryKind::FeedbackText | TelemetryKind::ConversationDetail => {}
        }
    }
    report.sessions = sessions.len();
    if report.sessions > 0 {
        report.avg_rounds_per_session = report.rounds as f64 / report.sessions as f64;
    }
    report.feedback_count = stars.len();
    if !stars.is_empty() {
        report.avg_stars = stars.iter().sum::<f64>() / stars.len() as f64;
    }
    latencies.sort_unstable();
    report.latency_ms = LatencyPercentiles {
        p50: nearest_rank(&latencies, 50.0),
        p90: nearest_rank(&latencies, 90.0),
        p99: nearest_rank(&latencies, 99.0),
    };
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn stat(session: &str, latency: u64) -> TelemetryEvent {
        TelemetryEvent {
            latency_ms: Some(latency),
            ..TelemetryEvent::new(TelemetryKind::ConversationStat, "t", session, "u", json!({"status": "ok"}))
        }
    }

    fn stars(n: u64) -> TelemetryEvent {
        TelemetryEvent::new(TelemetryKind::FeedbackStars, "t", "s", "u", json!({ "stars": n }))
    }

    #[test]
    fn empty_log_gives_zeros() {
        assert_eq!(compute_stats(&[], None, None), StatsReport::default());
    }

    #[test]
    fn averages() {
        let events = vec![stat("a", 10), stat("a", 20), stat("b", 30), stat("b", 40), stat("b", 50), stars(1), stars(5)];
        let r = compute_stats(&events, None, None);
        assert_eq!(r.sessions, 2);
        assert_eq!(r.rounds, 5);
        assert_eq!(r.avg_rounds_per_session, 2.5);
        assert_eq!(r.avg_stars, 3.0);
        assert_eq!(r.latency_ms, LatencyPercentiles { p50: 30, p90: 50, p99: 50 });
        assert_eq!(compute_stats(&[stars(3), stars(4)], None, None).avg_stars, 3.5);
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<u64> = (1..=10).collect();
        assert_eq!(nearest_rank(&v, 50.0), 5);
        assert_eq!(nearest_rank(&v, 90.0), 9);
        assert_eq!(nearest_rank(&v, 99.0), 10);
        assert_eq!(nearest_rank(&v, 0.0), 1);
        assert_eq!(nearest_rank(&[7], 99.0), 7);
    }

    #[test]
    fn window_filters_events() {
        let mut old = stat("a", 1);
        old.timestamp = "2020-01-01T00:00:00Z".parse().unwrap();
        let r = compute_stats(&[old, stat("b", 2)], Some("2021-01-01T00:00:00Z".parse().unwrap()), None);
        assert_eq!(r.sessions, 1);
        assert_eq!(r.latency_ms.p50, 2);
    }

    #[test]
    fn sink_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sink = TelemetrySink::open(dir.path(), "toy").unwrap();
        sink.append(&stat("a", 5)).unwrap();
        sink.append(&stars(4)).unwrap();
        std::fs::OpenOptions::new().append(true).open(sink.path()).unwrap().write_all(b"not json\n").unwrap();
        let events = read_events(sink.path()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[1].kind, TelemetryKind::FeedbackStars);
        assert!(read_events(&dir.path().join("missing.jsonl")).unwrap().is_empty());
    }
}
