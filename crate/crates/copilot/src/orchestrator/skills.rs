use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::NaiveDate;
use copilot_core::{execution_stages, DagError, DocKind};
use serde_json::{json, Map, Value};

use super::types::{AgentDefinition, PluginData, SkillDefinition, SkillKind, SkillOutput};
use super::OrchestratorError;
use crate::provider::{CompletionRequest, Message, Provider, ResponseSchema, ValueKind};
use crate::retrieval::{Retriever, SourceContext};

/// Everything a skill may read during one round.
pub struct SkillContext<'a> {
    pub provider: &'a dyn Provider,
    pub retriever: Option<&'a Retriever>,
    pub now: NaiveDate,
    pub source: &'a SourceContext,
    pub question: &'a str,
    pub history: &'a [Message],
    pub skill_data: Option<&'a PluginData>,
}

pub trait Skill: Send + Sync {
    fn run(&self, def: &SkillDefinition, args: &Map<String, Value>, ctx: &SkillContext<'_>) -> Result<SkillOutput, String>;
}

impl<F> Skill for F
where
    F: Fn(&SkillDefinition, &Map<String, Value>, &SkillContext<'_>) -> Result<SkillOutput, String> + Send + Sync,
{
    fn run(&self, def: &SkillDefinition, args: &Map<String, Value>, ctx: &SkillContext<'_>) -> Result<SkillOutput, String> {
        self(def, args, ctx)
    }
}

fn arg_text<'a>(args: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

struct RetrievalSkill(DocKind);

impl Skill for RetrievalSkill {
    fn run(&self, def: &SkillDefinition, args: &Map<String, Value>, ctx: &SkillContext<'_>) -> Result<SkillOutput, String> {
        let retriever = ctx.retriever.ok_or("no retriever configured")?;
        let query = arg_text(args, "query").or_else(|| arg_text(args, "user_intent")).unwrap_or(ctx.question);
        let retrieved = match self.0 {
            DocKind::Icm => {
                let mut source = ctx.source.clone();
                source.teams.extend(arg_text(args, "team").map(str::to_string));
                source.monitors.extend(arg_text(args, "monitor").map(str::to_string));
                retriever.retrieve_icm(query, ctx.history, &source, ctx.now)
            }
            DocKind::Tsg => retriever.retrieve_tsg(query, arg_text(args, "incident_summary"), ctx.now),
            DocKind::Code => retriever.retrieve_code(query, ctx.now),
        }
        .map_err(|e| e.to_string())?;
        Ok(SkillOutput { text: retrieved.render(), retrieved: Some(retrieved), ..SkillOutput::text(&def.name, "") })
    }
}

fn query_schema() -> ResponseSchema {
    ResponseSchema::new("generated_queries").field("queries", ValueKind::RecordList)
}

struct QueryGeneratorSkill {
    plugin: String,
    targets: Vec<String>,
}

impl Skill for QueryGeneratorSkill {
    fn run(&self, def: &SkillDefinition, args: &Map<String, Value>, ctx: &SkillContext<'_>) -> Result<SkillOutput, String> {
        let request = arg_text(args, "request").unwrap_or(ctx.question);
        let system = format!(
            "Write {} queries that answer the request. Return queries, a list of records with query and target. Targets: {}.\n{}",
            self.plugin,
            self.targets.join(", "),
            def.description
        );
        let req = CompletionRequest::new(
            format!("generate_query.{}", def.name),
            vec![Message::system(system), Message::user(request)],
        )
        .with_schema(query_schema());
        let rec = ctx.provider.complete_record(&req).map_err(|e| e.to_string())?;
        let default_target = self.targets.first().cloned().unwrap_or_default();
        let queries: Vec<Value> = rec["queries"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|q| {
                let text = q.get("query")?.as_str()?.trim();
                let target = q.get("target").and_then(Value::as_str).unwrap_or(&default_target);
                (!text.is_empty()).then(|| json!({"query": text, "target": target, "include": true}))
            })
            .collect();
        if queries.is_empty() {
            return Err("no queries generated".into());
        }
        let mut text = String::from("Review the proposed queries, edit them if needed, then submit to run them.\n");
        for (i, q) in queries.iter().enumerate() {
            text.push_str(&format!("\n{}. [{}]\n{}\n", i + 1, q["target"].as_str().unwrap_or(""), q["query"].as_str().unwrap_or("")));
        }
        Ok(SkillOutput {
            plugin_payload: Some(PluginData {
                kind: self.plugin.clone(),
                data: json!({"queries": queries, "targets": self.targets}),
            }),
            ..SkillOutput::text(&def.name, text)
        })
    }
}

/// Runs reviewed queries. There is no live query service behind it, so it
/// reports each query it was handed, verbatim.
struct QueryExecutorSkill {
    plugin: String,
}

impl Skill for QueryExecutorSkill {
    fn run(&self, def: &SkillDefinition, _args: &Map<String, Value>, ctx: &SkillContext<'_>) -> Result<SkillOutput, String> {
        let data = ctx
            .skill_data
            .filter(|d| d.kind == self.plugin)
            .ok_or_else(|| format!("no {} plugin data in the request", self.plugin))?;
        let executed: Vec<Value> = data.data["queries"]
            .as_array()
            .into_iter()
            .flatten()
            .filter(|q| q.get("include").and_then(Value::as_bool).unwrap_or(true))
            .filter_map(|q| {
                let query = q.get("query")?.as_str()?;
                Some(json!({"query": query, "target": q.get("target").and_then(Value::as_str).unwrap_or("")}))
            })
            .collect();
        let mut text = format!("Executed {} {} quer{}.", executed.len(), self.plugin, if executed.len() == 1 { "y" } else { "ies" });
        for q in &executed {
            text.push_str(&format!("\n[{}] {}", q["target"].as_str().unwrap_or(""), q["query"].as_str().unwrap_or("")));
        }
        let mut record = Map::new();
        record.insert("executed".into(), Value::Array(executed));
        Ok(SkillOutput { record: Some(record), ..SkillOutput::text(&def.name, text) })
    }
}

struct EchoSkill(Option<String>);

impl Skill for EchoSkill {
    fn run(&self, def: &SkillDefinition, args: &Map<String, Value>, _ctx: &SkillContext<'_>) -> Result<SkillOutput, String> {
        let text = match &self.0 {
            Some(t) => args.iter().fold(t.clone(), |acc, (k, v)| {
                let v = v.as_str().map_or_else(|| v.to_string(), str::to_string);
                acc.replace(&format!("{{{{{k}}}}}"), &v)
            }),
            None => Value::Object(args.clone()).to_string(),
        };
        Ok(SkillOutput { record: Some(args.clone()), ..SkillOutput::text(&def.name, text) })
    }
}

#[derive(Clone)]
pub struct RegisteredSkill {
    pub def: SkillDefinition,
    pub runner: Arc<dyn Skill>,
}

/// Validated agent and skill registries.
#[derive(Clone, Default)]
pub struct Registry {
    agents: BTreeMap<String, AgentDefinition>,
    /// Agent names in configuration order, as shown to the planner.
    agent_order: Vec<String>,
    skills: BTreeMap<String, RegisteredSkill>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("agents", &self.agent_order)
            .field("skills", &self.skills.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Registry {
    /// Builds registries from definitions. `custom` supplies behavior for
    /// skills of kind `custom`.
    pub fn new(
        agents: Vec<AgentDefinition>,
        skills: Vec<SkillDefinition>,
        mut custom: BTreeMap<String, Arc<dyn Skill>>,
    ) -> Result<Self, OrchestratorError> {
        let invalid = |m: String| Err(OrchestratorError::Registry(m));
        let mut reg = Registry::default();
        for def in skills {
            let mut names = BTreeSet::new();
            if let Some(a) = def.args.iter().find(|a| !names.insert(a.name.as_str())) {
                return invalid(format!("skill `{}` declares arg `{}` twice", def.name, a.name));
            }
            let runner: Arc<dyn Skill> = match &def.kind {
                SkillKind::BuiltinRetrieval { corpus } => Arc::new(RetrievalSkill(*corpus)),
                SkillKind::QueryGenerator { plugin, targets } => {
                    Arc::new(QueryGeneratorSkill { plugin: plugin.clone(), targets: targets.clone() })
                }
                SkillKind::QueryExecutor { plugin } => Arc::new(QueryExecutorSkill { plugin: plugin.clone() }),
                SkillKind::Echo { template } => Arc::new(EchoSkill(template.clone())),
                SkillKind::Custom => match custom.remove(&def.name) {
                    Some(r) => r,
                    None => return invalid(format!("custom skill `{}` has no registered behavior", def.name)),
                },
            };
            if reg.skills.contains_key(&def.name) {
                return invalid(format!("skill `{}` defined twice", def.name));
            }
            reg.skills.insert(def.name.clone(), RegisteredSkill { def, runner });
        }
        for s in reg.skills.values() {
            if let Some(d) = s.def.dependencies.iter().find(|d| !reg.skills.contains_key(*d)) {
                return invalid(format!("skill `{}` depends on unknown skill `{d}`", s.def.name));
            }
        }
        for a in agents {
            if reg.agents.contains_key(&a.name) {
                return invalid(format!("agent `{}` defined twice", a.name));
            }
            if let Some(s) = a.skills.iter().find(|s| !reg.skills.contains_key(*s)) {
                return invalid(format!("agent `{}` uses unknown skill `{s}`", a.name));
            }
            let names: Vec<&str> = a.skills.iter().map(String::as_str).collect();
            reg.stages(&names).map_err(|e| OrchestratorError::Registry(format!("agent `{}`: {e}", a.name)))?;
            reg.agent_order.push(a.name.clone());
            reg.agents.insert(a.name.clone(), a);
        }
        Ok(reg)
    }

    pub fn agent(&self, name: &str) -> Option<&AgentDefinition> {
        self.agents.get(name)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentDefinition> {
        self.agent_order.iter().map(|n| &self.agents[n])
    }

    pub fn skill(&self, name: &str) -> Option<&RegisteredSkill> {
        self.skills.get(name)
    }

    pub fn skills(&self) -> impl Iterator<Item = &RegisteredSkill> {
        self.skills.values()
    }

    /// The executor skill for a plugin kind, if any.
    pub fn executor_for(&self, plugin: &str) -> Option<&RegisteredSkill> {
        self.skills.values().find(|s| matches!(&s.def.kind, SkillKind::QueryExecutor { plugin: p } if p == plugin))
    }

    /// Topological levels of the selected skills; names sorted within a level.
    pub fn stages(&self, selected: &[&str]) -> Result<Vec<Vec<String>>, DagError> {
        execution_stages(selected, |n| {
            self.skills.get(n).into_iter().flat_map(|s| s.def.dependencies.iter().map(String::as_str))
        })
    }
}
