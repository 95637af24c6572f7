//! Tenant configuration: one TOML file describing sources, provider,
//! retrieval, agents, skills and gateway settings. Relative paths resolve
//! against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use copilot_core::DocKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::index::{IndexStore, MANIFEST_FILE};
use crate::orchestrator::{
    AgentDefinition, Clock, FixedClock, Orchestrator, OrchestratorConfig, Registry, Skill, SkillDefinition, SystemClock,
};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, PipelineReport, SourceSpec};
use crate::provider::{HttpProvider, HttpProviderConfig, Provider, ScriptedProvider};
use crate::querygen::{load_fewshots, FewShots, QueryGenerator};
use crate::retrieval::{RetrievalConfig, Retriever, SourceContext};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    /// Rule-table provider read from a JSON script.
    Scripted { script: PathBuf },
    /// OpenAI-compatible HTTP endpoint.
    Http(HttpProviderConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub bind: String,
    /// Bearer token clients must present; no check when absent.
    pub token: Option<String>,
    pub telemetry_dir: PathBuf,
    /// Store full conversation text in telemetry.
    pub conversation_detail: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: "127.0.0.1:8080".into(),
            token: None,
            telemetry_dir: PathBuf::from("telemetry"),
            conversation_detail: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(flatten)]
    pub agent: AgentDefinition,
    /// File holding the final prompt; read at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_prompt_file: Option<PathBuf>,
}

fn default_index_dir() -> PathBuf {
    PathBuf::from("index")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantConfig {
    pub name: String,
    pub provider: ProviderConfig,
    #[serde(default = "default_index_dir")]
    pub index_dir: PathBuf,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    /// Directory with `icm.jsonl`, `tsg.jsonl` and `code.jsonl` example
    /// files replacing the bundled ones.
    #[serde(default)]
    pub fewshot_dir: Option<PathBuf>,
    /// Pins "today" for reproducible runs.
    #[serde(default)]
    pub today: Option<NaiveDate>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub orchestrator: OrchestratorConfig,
    #[serde(default)]
    pub source_context: SourceContext,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub skills: Vec<SkillDefinition>,
}

/// Environment variables that override file settings.
pub const ENV_OVERRIDES: [&str; 5] =
    ["COPILOT_BIND", "COPILOT_TOKEN", "COPILOT_INDEX_DIR", "COPILOT_TELEMETRY_DIR", "COPILOT_PROVIDER_URL"];

impl TenantConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    /// Parses `text` as if read from `path` and resolves relative paths.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: TenantConfig = toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<(), ConfigError> {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.index_dir);
        join(&mut self.gateway.telemetry_dir);
        self.sources.iter_mut().for_each(|s| join(&mut s.path));
        if let Some(d) = &mut self.fewshot_dir {
            join(d);
        }
        if let ProviderConfig::Scripted { script } = &mut self.provider {
            join(script);
        }
        for a in &mut self.agents {
            if let Some(f) = &mut a.final_prompt_file {
                join(f);
                let text = std::fs::read_to_string(&*f).map_err(|source| ConfigError::Io { path: f.clone(), source })?;
                a.agent.final_prompt = Some(text.trim().to_string());
            }
        }
        Ok(())
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let get = |k: &str| lookup(k).filter(|v| !v.is_empty());
        if let Some(v) = get("COPILOT_BIND") {
            self.gateway.bind = v;
        }
        if let Some(v) = get("COPILOT_TOKEN") {
            self.gateway.token = Some(v);
        }
        if let Some(v) = get("COPILOT_INDEX_DIR") {
            self.index_dir = v.into();
        }
        if let Some(v) = get("COPILOT_TELEMETRY_DIR") {
            self.gateway.telemetry_dir = v.into();
        }
        if let (Some(v), ProviderConfig::Http(h)) = (get("COPILOT_PROVIDER_URL"), &mut self.provider) {
            h.base_url = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.name.trim().is_empty() {
            return invalid("tenant name is empty".into());
        }
        if self.agents.is_empty() {
            return invalid("no agents configured".into());
        }
        self.retrieval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn kind_index_dir(&self, kind: DocKind) -> PathBuf {
        self.index_dir.join(kind.to_string())
    }

    pub fn build_provider(&self) -> Result<Arc<dyn Provider>, ConfigError> {
        Ok(match &self.provider {
            ProviderConfig::Scripted { script } => {
                Arc::new(ScriptedProvider::from_file(script).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            ProviderConfig::Http(h) => {
                Arc::new(HttpProvider::new(h.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        })
    }

    pub fn fewshots(&self) -> Result<FewShots, ConfigError> {
        let mut shots = FewShots::bundled();
        if let Some(dir) = &self.fewshot_dir {
            for kind in DocKind::ALL {
                let path = dir.join(format!("{kind}.jsonl"));
                if path.exists() {
                    shots.set(kind, load_fewshots(&path).map_err(|e| ConfigError::Invalid(e.to_string()))?);
                }
            }
        }
        Ok(shots)
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        match self.today {
            Some(d) => Arc::new(FixedClock(d)),
            None => Arc::new(SystemClock),
        }
    }

    /// Kinds that have at least one configured source.
    pub fn kinds(&self) -> Vec<DocKind> {
        DocKind::ALL.into_iter().filter(|k| self.sources.iter().any(|s| s.kind == *k)).collect()
    }

    /// Builds the index of every requested kind.
    pub fn ingest(&self, provider: Arc<dyn Provider>, kinds: &[DocKind]) -> Result<Vec<PipelineReport>, PipelineError> {
        let pipeline = Pipeline::new(provider, self.pipeline.clone())?;
        kinds.iter().map(|k| pipeline.run_sources(*k, &self.sources, &self.kind_index_dir(*k))).collect()
    }

    /// Loads every built index. Kinds without an index are skipped.
    pub fn retriever(&self, provider: Arc<dyn Provider>) -> Result<Retriever, ConfigError> {
        let qg = QueryGenerator::new(provider.clone(), self.fewshots()?, self.retrieval.per_query_n);
        let mut r = Retriever::new(provider, qg, self.retrieval.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for kind in DocKind::ALL {
            let dir = self.kind_index_dir(kind);
            if !dir.join(MANIFEST_FILE).exists() {
                if self.sources.iter().any(|s| s.kind == kind) {
                    warn!(%kind, dir = %dir.display(), "no index built for configured source");
                }
                continue;
            }
            let store = IndexStore::load(&dir).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            r = r.with_index(Arc::new(store));
        }
        r.repo_descriptions = self
            .sources
            .iter()
            .filter_map(|s| s.description.clone().map(|d| (s.source_name(), d)))
            .collect::<BTreeMap<_, _>>();
        Ok(r)
    }

    pub fn registry(&self, custom: BTreeMap<String, Arc<dyn Skill>>) -> Result<Registry, ConfigError> {
        let agents = self.agents.iter().map(|a| a.agent.clone()).collect();
        Registry::new(agents, self.skills.clone(), custom).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The full runtime: provider, loaded indexes and registries.
    pub fn orchestrator(&self, provider: Arc<dyn Provider>) -> Result<Orchestrator, ConfigError> {
        let retriever = self.retriever(provider.clone())?;
        let mut o = Orchestrator::new(self.registry(BTreeMap::new())?, provider, self.orchestrator.clone())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?
            .with_retriever(Arc::new(retriever))
            .with_clock(self.clock());
        o.source = self.source_context.clone();
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::SkillKind;

    const SAMPLE: &str = r#"
name = "demo"
today = "2024-05-01"

[provider]
kind = "scripted"
script = "scripted.json"

[[sources]]
kind = "tsg"
path = "guides"
description = "Gateway runbooks"

[retrieval]
top_k = 3

[gateway]
token = "secret"

[[agents]]
name = "qa_agent"
description = "Answers questions"
skills = ["get_tsg"]

[[skills]]
name = "get_tsg"
kind = "builtin-retrieval"
corpus = "tsg"
args = [{ name = "user_intent", required = true }]
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let cfg = TenantConfig::parse(SAMPLE, Path::new("/etc/tenants/demo.toml")).unwrap();
        assert_eq!(cfg.sources[0].path, Path::new("/etc/tenants/guides"));
        assert_eq!(cfg.index_dir, Path::new("/etc/tenants/index"));
        assert_eq!(cfg.kind_index_dir(DocKind::Tsg), Path::new("/etc/tenants/index/tsg"));
        assert_eq!(cfg.provider, ProviderConfig::Scripted { script: "/etc/tenants/scripted.json".into() });
        assert_eq!(cfg.retrieval.top_k, 3);
        assert_eq!(cfg.retrieval.per_query_n, 20);
        assert_eq!(cfg.orchestrator.max_rounds, 5);
        assert_eq!(cfg.skills[0].kind, SkillKind::BuiltinRetrieval { corpus: DocKind::Tsg });
        assert!(cfg.skills[0].args[0].required);
        assert_eq!(cfg.kinds(), [DocKind::Tsg]);
        assert!(cfg.registry(BTreeMap::new()).is_ok());
    }

    #[test]
    fn env_overrides_file_values() {
        let mut cfg = TenantConfig::parse(SAMPLE, Path::new("demo.toml")).unwrap();
        cfg.apply_env(|k| match k {
            "COPILOT_TOKEN" => Some("from-env".into()),
            "COPILOT_BIND" => Some("0.0.0.0:9000".into()),
            "COPILOT_INDEX_DIR" => Some(String::new()),
            _ => None,
        });
        assert_eq!(cfg.gateway.token.as_deref(), Some("from-env"));
        assert_eq!(cfg.gateway.bind, "0.0.0.0:9000");
        assert_eq!(cfg.index_dir, Path::new("index"));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(TenantConfig::parse("name = ", Path::new("x.toml")), Err(ConfigError::Parse { .. })));
        let no_agents = SAMPLE.replace("[[agents]]", "[[unused]]");
        assert!(matches!(TenantConfig::parse(&no_agents, Path::new("x.toml")), Err(ConfigError::Invalid(_))));
        let bad_k = SAMPLE.replace("top_k = 3", "top_k = 0");
        assert!(matches!(TenantConfig::parse(&bad_k, Path::new("x.toml")), Err(ConfigError::Invalid(_))));
    }
}
