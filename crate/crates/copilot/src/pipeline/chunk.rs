use copilot_core::text::whitespace_spans;
use copilot_core::{fixed_windows, ChunkingSpec};
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{PipelineError, RawRecord};
use crate::provider::{CompletionRequest, Message, Provider, ResponseSchema, ValueKind};

/// A window of a record's body. `text` is the original byte slice from the
/// first to the last token, so interior whitespace is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub parent_id: String,
    pub ordinal: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
    pub text: String,
}

pub fn chunk_fixed(record: &RawRecord, spec: &ChunkingSpec) -> Result<Vec<TextChunk>, PipelineError> {
    let spans = whitespace_spans(&record.body);
    let windows = fixed_windows(spans.len(), spec)?;
    Ok(windows
        .into_iter()
        .map(|w| {
            let byte_start = spans[w.start].0;
            let byte_end = spans[w.end - 1].1;
            TextChunk {
                parent_id: record.id.clone(),
                ordinal: w.ordinal,
                token_start: w.start,
                token_end: w.end,
                byte_start,
                byte_end,
                text: record.body[byte_start..byte_end].to_string(),
            }
        })
        .collect())
}

/// Source text spanning up to `n` chunks on either side of `chunks[i]`.
pub fn neighbor_window<'a>(body: &'a str, chunks: &[TextChunk], i: usize, n: usize) -> &'a str {
    let first = &chunks[i.saturating_sub(n)];
    let last = &chunks[(i + n).min(chunks.len() - 1)];
    &body[first.byte_start..last.byte_end]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RechunkOutcome {
    pub segments: Vec<String>,
    /// True when the original chunk was kept.
    pub fell_back: bool,
}

pub const RECHUNK_TASK: &str = "rechunk_code";

const RECHUNK_PROMPT: &str = "The code below is a window around one chunk of a source file. Extract every complete
function or class that overlaps the chunk between the markers. Copy each one verbatim.
Return segments, a list of strings.";

pub fn rechunk_schema() -> ResponseSchema {
    ResponseSchema::new(RECHUNK_TASK).field("segments", ValueKind::TextList)
}

/// Asks the provider for complete code segments and keeps them only when
/// every one is a verbatim substring of `window`.
pub fn rechunk_code(chunk: &TextChunk, window: &str, provider: &dyn Provider) -> RechunkOutcome {
    let fallback = || RechunkOutcome { segments: vec![chunk.text.clone()], fell_back: true };
    let req = CompletionRequest::new(
        RECHUNK_TASK,
        vec![
            Message::system(RECHUNK_PROMPT),
            Message::user(format!("{window}\n\n--- chunk ---\n{}", chunk.text)),
        ],
    )
    .with_schema(rechunk_schema());
    let record = match provider.complete_record(&req) {
        Ok(r) => r,
        Err(e) => {
            debug!(chunk = %chunk.parent_id, ordinal = chunk.ordinal, error = %e, "rechunk fell back");
            return fallback();
        }
    };
    let segments: Vec<String> = record["segments"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_str())
        .map(str::to_string)
        .collect();
    if segments.is_empty() || segments.iter().any(|s| s.trim().is_empty() || !window.contains(s.as_str())) {
        debug!(chunk = %chunk.parent_id, ordinal = chunk.ordinal, "rechunk output not verbatim, fell back");
        return fallback();
    }
    RechunkOutcome { segments, fell_back: false }
}
