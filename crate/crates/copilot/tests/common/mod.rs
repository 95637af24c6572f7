#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use copilot::config::TenantConfig;
use copilot::orchestrator::Orchestrator;
use serde::Deserialize;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}

/// The toy tenant with its index and telemetry redirected under `work`.
pub fn toy_config(work: &Path) -> TenantConfig {
    let path = toy_dir().join("tenant.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut cfg = TenantConfig::parse(&text, &path).unwrap();
    cfg.index_dir = work.join("index");
    cfg.gateway.telemetry_dir = work.join("telemetry");
    cfg
}

/// Builds every index of the toy tenant and returns its orchestrator.
pub fn toy_orchestrator(work: &Path) -> (TenantConfig, Orchestrator) {
    let cfg = toy_config(work);
    let provider = cfg.build_provider().unwrap();
    cfg.ingest(provider.clone(), &cfg.kinds()).unwrap();
    let o = cfg.orchestrator(provider).unwrap();
    (cfg, o)
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioQuestion {
    pub id: String,
    pub question: String,
    pub agents: Vec<String>,
    pub golden_skills: BTreeSet<String>,
    pub golden_docs: BTreeSet<String>,
}

pub fn scenario() -> Vec<ScenarioQuestion> {
    copilot::evalkit::read_jsonl(&toy_dir().join("eval/questions.jsonl")).unwrap()
}
