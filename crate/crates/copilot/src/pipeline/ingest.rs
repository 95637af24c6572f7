use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use copilot_core::{DocKind, TicketType};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::PipelineError;

/// One ingested file or incident before transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source: String,
    pub kind: DocKind,
    /// Relative path for files, incident id for incidents.
    pub id: String,
    pub body: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// Where one corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: DocKind,
    /// Directory for guides and code, line-delimited export file for incidents.
    pub path: PathBuf,
    /// Source identifier; defaults to the final path component.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
}

impl SourceSpec {
    pub fn source_name(&self) -> String {
        self.source.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.kind.to_string())
        })
    }
}

/// Line format of the incident export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    pub create_date: NaiveDate,
    #[serde(default)]
    pub resolve_date: Option<NaiveDate>,
    #[serde(default)]
    pub ticket_type: TicketType,
    pub team: String,
}

pub const ATTR_TITLE: &str = "title";
pub const ATTR_LANGUAGE: &str = "language";
pub const ATTR_CREATE_DATE: &str = "create_date";
pub const ATTR_RESOLVE_DATE: &str = "resolve_date";
pub const ATTR_TICKET_TYPE: &str = "ticket_type";

const CODE_EXTENSIONS: &[&str] = &[
    "rs", "py", "cs", "go", "java", "kt", "ts", "tsx", "js", "jsx", "c", "h", "cc", "cpp", "hpp", "rb",
    "scala", "swift", "sh", "sql", "kql", "ps1",
];

pub fn ingest(spec: &SourceSpec) -> Result<Vec<RawRecord>, PipelineError> {
    if !spec.path.exists() {
        return Err(PipelineError::MissingPath(spec.path.clone()));
    }
    let source = spec.source_name();
    match spec.kind {
        DocKind::Tsg => ingest_files(&spec.path, &source, DocKind::Tsg, |ext| {
            matches!(ext, "md" | "markdown")
        }),
        DocKind::Code => ingest_files(&spec.path, &source, DocKind::Code, |ext| CODE_EXTENSIONS.contains(&ext)),
        DocKind::Icm => ingest_incidents(&spec.path),
    }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn ingest_files(
    root: &Path,
    source: &str,
    kind: DocKind,
    keep: impl Fn(&str) -> bool,
) -> Result<Vec<RawRecord>, PipelineError> {
    let mut out = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| PipelineError::Io {
            path: e.path().map_or_else(|| root.to_path_buf(), Path::to_path_buf),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default();
        if !keep(&ext) {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let body = read(path)?;
        let mut attributes = BTreeMap::new();
        match kind {
            DocKind::Tsg => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                attributes.insert(ATTR_TITLE.into(), markdown_title(&body).unwrap_or(stem));
            }
            _ => {
                attributes.insert(ATTR_LANGUAGE.into(), ext);
            }
        }
        out.push(RawRecord { source: source.to_string(), kind, id, body, attributes });
    }
    Ok(out)
}

fn markdown_title(body: &str) -> Option<String> {
    body.lines()
        .map(str::trim)
        .find_map(|l| l.strip_prefix("# "))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
}

fn ingest_incidents(path: &Path) -> Result<Vec<RawRecord>, PipelineError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: IncidentRecord = serde_json::from_str(line).map_err(|e| PipelineError::MalformedIncident {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(incident_to_raw(rec));
    }
    Ok(out)
}

pub fn incident_to_raw(rec: IncidentRecord) -> RawRecord {
    let mut attributes = BTreeMap::from([
        (ATTR_TITLE.to_string(), rec.title),
        (ATTR_CREATE_DATE.to_string(), rec.create_date.to_string()),
        (ATTR_TICKET_TYPE.to_string(), ticket_name(rec.ticket_type).to_string()),
    ]);
    if let Some(d) = rec.resolve_date {
        attributes.insert(ATTR_RESOLVE_DATE.into(), d.to_string());
    }
    RawRecord { source: rec.team, kind: DocKind::Icm, id: rec.id, body: rec.body, attributes }
}

fn ticket_name(t: TicketType) -> &'static str {
    match t {
        TicketType::Lsi => "LSI",
        TicketType::Cri => "CRI",
        TicketType::None => "NONE",
    }
}
