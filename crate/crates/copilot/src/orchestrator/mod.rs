//! Per-round agent orchestration.
//!
//! Each call to [`Orchestrator::run_round`] runs the termination check and
//! the planner side by side, then executes at most one agent: skills are
//! selected by a completion, staged by their dependencies, run stage by
//! stage with same-stage skills in parallel, and optionally summarized by a
//! closing completion. All conversation state, including the meta-plan,
//! arrives in the request and leaves in the result.

mod skills;
mod types;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::NaiveDate;
use serde_json::{json, Map, Value};
use thiserror::Error;
use tracing::{debug, warn};

pub use skills::{Registry, RegisteredSkill, Skill, SkillContext};
pub use types::*;

use crate::provider::{CompletionRequest, Message, Provider, ResponseSchema, Role, ValueKind};
use crate::retrieval::{Retriever, SourceContext};

pub const PLAN_TASK: &str = "plan";
pub const TERMINATE_TASK: &str = "terminate";

pub fn select_task(agent: &str) -> String {
    format!("select_skills.{agent}")
}

pub fn final_task(agent: &str) -> String {
    format!("final.{agent}")
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid registry: {0}")]
    Registry(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no executor skill handles plugin kind `{0}`")]
    UnknownPlugin(String),
    #[error("skill dependency cycle: {0}")]
    Cycle(#[from] copilot_core::DagError),
}

pub trait Clock: Send + Sync {
    fn today(&self) -> NaiveDate;
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn today(&self) -> NaiveDate {
        chrono::Utc::now().date_naive()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub NaiveDate);

impl Clock for FixedClock {
    fn today(&self) -> NaiveDate {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub max_rounds: usize,
    /// Agent used when planning yields nothing usable.
    pub default_agent: String,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { max_rounds: 5, default_agent: "qa_agent".into() }
    }
}

const PLAN_PROMPT: &str = "You schedule agents for an engineering copilot. Pick the agents needed to answer
the user's latest question, in the order they should run. Most questions need one agent; use more only
when the question clearly spans several of them. Return agents, a list of agent names.";

const TERMINATE_PROMPT: &str = "Decide whether the conversation already answers the user's latest question.
Answer terminate=true when the last assistant message resolves it, when it asks the user for input, or
when it states that the information is unavailable. Answer terminate=false when the question has parts
that no assistant message has addressed yet.
Example: the user asks for a mitigation and the last message lists mitigation steps: terminate=true.
Example: the user asks for related incidents and the code that emits an error, and only incidents were
listed: terminate=false.";

const SELECT_PROMPT: &str = "Choose the skills to run for the user's latest question and fill in their
arguments. Return skills, a list of records with name and args. Reference another skill's output in an
argument as {{skill_name}}.";

fn plan_schema() -> ResponseSchema {
    ResponseSchema::new(PLAN_TASK).field("agents", ValueKind::TextList)
}

fn terminate_schema() -> ResponseSchema {
    ResponseSchema::new(TERMINATE_TASK).field("terminate", ValueKind::Boolean).optional("reason", ValueKind::Text)
}

fn select_schema() -> ResponseSchema {
    ResponseSchema::new("select_skills").field("skills", ValueKind::RecordList)
}

/// One skill chosen for execution, with its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillCall {
    pub name: String,
    pub args: Map<String, Value>,
}

/// Prior messages and the current question, split once per round.
struct Turn<'a> {
    /// Messages before the question, or the whole history when the
    /// question was asked earlier and agents have answered since.
    history: Vec<Message>,
    question: &'a str,
    /// The question already appears in `history`.
    asked: bool,
}

impl Turn<'_> {
    fn conversation(&self) -> Vec<Message> {
        let mut c = self.history.clone();
        if !self.asked {
            c.push(Message::user(self.question));
        }
        c
    }
}

pub struct Orchestrator {
    registry: Registry,
    provider: Arc<dyn Provider>,
    retriever: Option<Arc<Retriever>>,
    clock: Arc<dyn Clock>,
    pub source: SourceContext,
    pub config: OrchestratorConfig,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("registry", &self.registry).field("config", &self.config).finish()
    }
}

impl Orchestrator {
    pub fn new(
        registry: Registry,
        provider: Arc<dyn Provider>,
        config: OrchestratorConfig,
    ) -> Result<Self, OrchestratorError> {
        if registry.agents().next().is_none() {
            return Err(OrchestratorError::Registry("no agents registered".into()));
        }
        if registry.agent(&config.default_agent).is_none() {
            return Err(OrchestratorError::Registry(format!("default agent `{}` is not registered", config.default_agent)));
        }
        if config.max_rounds == 0 {
            return Err(OrchestratorError::Registry("max_rounds must be at least 1".into()));
        }
        Ok(Orchestrator {
            registry,
            provider,
            retriever: None,
            clock: Arc::new(SystemClock),
            source: SourceContext::default(),
            config,
        })
    }

    pub fn with_retriever(mut self, retriever: Arc<Retriever>) -> Self {
        self.retriever = Some(retriever);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }

    pub fn retriever(&self) -> Option<&Arc<Retriever>> {
        self.retriever.as_ref()
    }

    pub fn today(&self) -> NaiveDate {
        self.clock.today()
    }

    pub fn run_round(&self, req: &ChatRequest) -> Result<RoundResult, OrchestratorError> {
        self.run_round_streaming(req, &|_| {})
    }

    /// Runs one round, reporting progress through `emit` as it happens.
    pub fn run_round_streaming<F>(&self, req: &ChatRequest, emit: &F) -> Result<RoundResult, OrchestratorError>
    where
        F: Fn(StreamEvent) + Sync,
    {
        self.check_request(req)?;
        let turn = validate(req)?;
        let mut plan = req.meta_plan.clone().unwrap_or_default();
        emit(StreamEvent::RoundStarted { round: plan.round });

        let result = if let Some(data) = &req.skill_data {
            self.run_plugin_round(data, &turn, plan, emit)?
        } else {
            let conversation = turn.conversation();
            let (terminate, planned) = std::thread::scope(|s| {
                let t = s.spawn(|| self.decide_termination(&conversation, &plan));
                let p = self.plan_meta(&conversation, &plan);
                (t.join().unwrap_or(true), p)
            });
            if terminate {
                RoundResult { agent: None, agent_output: String::new(), skill_outputs: BTreeMap::new(), meta_plan: plan, terminated: true }
            } else {
                plan = planned;
                match plan.next_agent().map(str::to_string) {
                    None => RoundResult { agent: None, agent_output: String::new(), skill_outputs: BTreeMap::new(), meta_plan: plan, terminated: true },
                    Some(name) => {
                        let agent = self.registry.agent(&name).expect("planned agents are registered");
                        let (agent_output, skill_outputs) = self.execute_agent(agent, &turn, None, emit)?;
                        plan.cursor += 1;
                        plan.round += 1;
                        RoundResult { agent: Some(name), agent_output, skill_outputs, meta_plan: plan, terminated: false }
                    }
                }
            }
        };
        if let Some(agent) = &result.agent {
            emit(StreamEvent::AgentOutput { agent: agent.clone(), text: result.agent_output.clone() });
        }
        emit(StreamEvent::RoundComplete { response: result.clone().into() });
        Ok(result)
    }

    /// Rejects requests no round can serve: an empty question without
    /// plugin data, a meta-plan that is out of range or names unknown
    /// agents, or plugin data no executor skill handles.
    pub fn check_request(&self, req: &ChatRequest) -> Result<(), OrchestratorError> {
        validate(req)?;
        if let Some(plan) = &req.meta_plan {
            if plan.cursor > plan.agents.len() {
                return Err(OrchestratorError::InvalidRequest("meta_plan cursor is past the end of its agents".into()));
            }
            if let Some(a) = plan.agents.iter().find(|a| self.registry.agent(a).is_none()) {
                return Err(OrchestratorError::InvalidRequest(format!("meta_plan names unknown agent `{a}`")));
            }
        }
        if let Some(data) = &req.skill_data {
            if self.registry.executor_for(&data.kind).is_none() {
                return Err(OrchestratorError::UnknownPlugin(data.kind.clone()));
            }
        }
        Ok(())
    }

    /// Hands plugin data to the matching executor skill. The round counts
    /// toward the limit but does not move the plan cursor.
    fn run_plugin_round<F>(&self, data: &PluginData, turn: &Turn<'_>, mut plan: MetaPlan, emit: &F) -> Result<RoundResult, OrchestratorError>
    where
        F: Fn(StreamEvent) + Sync,
    {
        let skill = self.registry.executor_for(&data.kind).ok_or_else(|| OrchestratorError::UnknownPlugin(data.kind.clone()))?;
        let ctx = self.context(turn, Some(data));
        let out = run_skill(skill, &Map::new(), &ctx);
        emit(StreamEvent::SkillCompleted { skill: out.skill.clone(), output: out.clone() });
        plan.round += 1;
        let agent_output = match &out.error {
            Some(e) => format!("{} failed: {e}", out.skill),
            None => out.text.clone(),
        };
        Ok(RoundResult {
            agent: None,
            agent_output,
            skill_outputs: BTreeMap::from([(out.skill.clone(), out)]),
            meta_plan: plan,
            terminated: false,
        })
    }

    fn context<'a>(&'a self, turn: &'a Turn<'a>, skill_data: Option<&'a PluginData>) -> SkillContext<'a> {
        SkillContext {
            provider: self.provider.as_ref(),
            retriever: self.retriever.as_deref(),
            now: self.clock.today(),
            source: &self.source,
            question: turn.question,
            history: &turn.history,
            skill_data,
        }
    }

    /// Whether the conversation is finished. Skipped before the first agent
    /// runs; forced once the plan is spent or the round limit is reached.
    pub fn decide_termination(&self, conversation: &[Message], plan: &MetaPlan) -> bool {
        if plan.round == 0 {
            return false;
        }
        if plan.round >= self.config.max_rounds || plan.exhausted() {
            return true;
        }
        let mut messages = vec![Message::system(TERMINATE_PROMPT)];
        messages.extend(conversation.iter().filter(|m| m.role != Role::System).cloned());
        let req = CompletionRequest::new(TERMINATE_TASK, messages).with_schema(terminate_schema());
        match self.provider.complete_record(&req) {
            Ok(rec) => rec.get("terminate").and_then(Value::as_bool).unwrap_or(true),
            Err(e) => {
                warn!(error = %e, "termination check failed, stopping");
                true
            }
        }
    }

    /// The plan for this round. A fresh conversation gets a new plan (the
    /// default agent if planning fails twice). A running plan is replaced
    /// only by one that keeps the agents already executed and still has
    /// agents left to run.
    pub fn plan_meta(&self, conversation: &[Message], prior: &MetaPlan) -> MetaPlan {
        let proposed = self.propose_plan(conversation, prior).or_else(|| {
            debug!("plan rejected, retrying");
            self.propose_plan(conversation, prior)
        });
        let fresh = prior.agents.is_empty();
        match proposed {
            Some(agents) if fresh => MetaPlan { agents, cursor: 0, round: prior.round },
            Some(agents) if agents.len() > prior.cursor && agents[..prior.cursor] == prior.agents[..prior.cursor] => {
                MetaPlan { agents, ..prior.clone() }
            }
            _ if fresh => MetaPlan { agents: vec![self.config.default_agent.clone()], cursor: 0, round: prior.round },
            _ => prior.clone(),
        }
    }

    fn propose_plan(&self, conversation: &[Message], prior: &MetaPlan) -> Option<Vec<String>> {
        let mut system = format!("{PLAN_PROMPT}\n\nAgents:");
        for a in self.registry.agents() {
            system.push_str(&format!("\n- {}: {}", a.name, a.description));
            if let Some(h) = &a.next_agent_hint {
                system.push_str(&format!(" (usually followed by {h})"));
            }
        }
        if !prior.agents.is_empty() {
            system.push_str(&format!(
                "\n\nCurrent plan: {}. Already run: {}.",
                prior.agents.join(", "),
                prior.agents[..prior.cursor].join(", ")
            ));
        }
        let mut messages = vec![Message::system(system)];
        messages.extend(conversation.iter().filter(|m| m.role != Role::System).cloned());
        let req = CompletionRequest::new(PLAN_TASK, messages).with_schema(plan_schema());
        let rec = match self.provider.complete_record(&req) {
            Ok(r) => r,
            Err(e) => {
                warn!(error = %e, "planner call failed");
                return None;
            }
        };
        let agents: Vec<String> = rec["agents"].as_array()?.iter().filter_map(Value::as_str).map(str::to_string).collect();
        if agents.is_empty() {
            return None;
        }
        if let Some(unknown) = agents.iter().find(|a| self.registry.agent(a).is_none()) {
            warn!(agent = %unknown, "planner named an unknown agent");
            return None;
        }
        let mut agents = agents;
        agents.truncate(self.config.max_rounds);
        Some(agents)
    }

    /// Skills and arguments for one agent. Skills outside the agent are
    /// dropped; a skill missing a required argument triggers one retry and
    /// is dropped if still incomplete.
    pub fn select_skills(&self, agent: &AgentDefinition, history: &[Message], question: &str) -> Vec<SkillCall> {
        let mut system = format!("{SELECT_PROMPT}\n\nAgent {}: {}\nSkills:", agent.name, agent.description);
        for name in &agent.skills {
            let s = &self.registry.skill(name).expect("agent skills are registered").def;
            let args: Vec<String> = s
                .args
                .iter()
                .map(|a| format!("{} ({}{})", a.name, a.kind, if a.required { ", required" } else { "" }))
                .collect();
            system.push_str(&format!("\n- {}: {} Args: {}", s.name, s.description, args.join(", ")));
        }
        if !agent.examples.is_empty() {
            system.push_str("\n\nExamples:\n");
            system.push_str(&agent.examples.join("\n"));
        }
        let mut messages = vec![Message::system(system)];
        messages.extend(history.iter().filter(|m| m.role != Role::System).cloned());
        messages.push(Message::user(question));
        let req = CompletionRequest::new(select_task(&agent.name), messages).with_schema(select_schema());

        let first = self.propose_skills(agent, &req);
        let incomplete: Vec<&SkillCall> = first.iter().filter(|c| !self.missing_args(c).is_empty()).collect();
        if incomplete.is_empty() && !first.is_empty() {
            return first;
        }
        let mut retry = req.clone();
        let note = if first.is_empty() {
            "No usable skill selection was returned. Try again.".to_string()
        } else {
            let gaps: Vec<String> =
                incomplete.iter().map(|c| format!("{} needs {}", c.name, self.missing_args(c).join(", "))).collect();
            format!("Required arguments are missing: {}. Try again.", gaps.join("; "))
        };
        retry.messages.push(Message::system(note));
        let second = self.propose_skills(agent, &retry);
        let chosen = if second.is_empty() { first } else { second };
        chosen
            .into_iter()
            .filter(|c| {
                let missing = self.missing_args(c);
                if !missing.is_empty() {
                    warn!(skill = %c.name, missing = ?missing, "dropping skill with missing required arguments");
                }
                missing.is_empty()
            })
            .collect()
    }

    fn propose_skills(&self, agent: &AgentDefinition, req: &CompletionRequest) -> Vec<SkillCall> {
        let rec = match self.provider.complete_record(req) {
            Ok(r) => r,
            Err(e) => {
                warn!(agent = %agent.name, error = %e, "skill selection failed");
                return Vec::new();
            }
        };
        let mut seen = BTreeSet::new();
        rec["skills"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|s| {
                let name = s.get("name")?.as_str()?;
                if !agent.skills.iter().any(|k| k == name) {
                    warn!(agent = %agent.name, skill = name, "dropping skill outside the agent");
                    return None;
                }
                if !seen.insert(name.to_string()) {
                    return None;
                }
                let args = s.get("args").and_then(Value::as_object).cloned().unwrap_or_default();
                Some(SkillCall { name: name.to_string(), args })
            })
            .collect()
    }

    fn missing_args(&self, call: &SkillCall) -> Vec<String> {
        let def = &self.registry.skill(&call.name).expect("selected skills are registered").def;
        def.args
            .iter()
            .filter(|a| a.required && call.args.get(&a.name).is_none_or(|v| v.is_null() || v.as_str() == Some("")))
            .map(|a| a.name.clone())
            .collect()
    }

    /// Dependency stages of a selection.
    pub fn build_execution_plan(&self, calls: &[SkillCall]) -> Result<Vec<Vec<String>>, OrchestratorError> {
        let names: Vec<&str> = calls.iter().map(|c| c.name.as_str()).collect();
        Ok(self.registry.stages(&names)?)
    }

    /// Runs one agent: selection, staged execution, then the agent output.
    /// `selection` overrides the selection completion when given.
    pub fn execute_agent_with<F>(
        &self,
        agent: &AgentDefinition,
        history: &[Message],
        question: &str,
        selection: Option<Vec<SkillCall>>,
        emit: &F,
    ) -> Result<(String, BTreeMap<String, SkillOutput>), OrchestratorError>
    where
        F: Fn(StreamEvent) + Sync,
    {
        let turn = Turn { history: history.to_vec(), question, asked: false };
        self.execute_agent(agent, &turn, selection, emit)
    }

    fn execute_agent<F>(
        &self,
        agent: &AgentDefinition,
        turn: &Turn<'_>,
        selection: Option<Vec<SkillCall>>,
        emit: &F,
    ) -> Result<(String, BTreeMap<String, SkillOutput>), OrchestratorError>
    where
        F: Fn(StreamEvent) + Sync,
    {
        let calls = selection.unwrap_or_else(|| self.select_skills(agent, &turn.history, turn.question));
        let stages = self.build_execution_plan(&calls)?;
        let args_of: BTreeMap<&str, &Map<String, Value>> = calls.iter().map(|c| (c.name.as_str(), &c.args)).collect();
        let ctx = self.context(turn, None);
        let mut outputs: BTreeMap<String, SkillOutput> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();

        for stage in &stages {
            let resolved: Vec<(&RegisteredSkill, Map<String, Value>)> = stage
                .iter()
                .map(|name| {
                    let skill = self.registry.skill(name).expect("staged skills are registered");
                    (skill, substitute(args_of[name.as_str()], &outputs))
                })
                .collect();
            let finished: Vec<SkillOutput> = std::thread::scope(|s| {
                let handles: Vec<_> = resolved
                    .iter()
                    .map(|(skill, args)| {
                        let ctx = &ctx;
                        s.spawn(move || {
                            let out = run_skill(skill, args, ctx);
                            emit(StreamEvent::SkillCompleted { skill: out.skill.clone(), output: out.clone() });
                            out
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .zip(&resolved)
                    .map(|(h, (skill, _))| h.join().unwrap_or_else(|_| SkillOutput::failed(&skill.def.name, "skill panicked")))
                    .collect()
            });
            for out in finished {
                order.push(out.skill.clone());
                outputs.insert(out.skill.clone(), out);
            }
        }

        let direct = order.iter().map(|n| &outputs[n]).find(|o| {
            o.succeeded() && !o.text.trim().is_empty() && self.registry.skill(&o.skill).is_some_and(|s| s.def.direct_return)
        });
        let text = match (direct, &agent.final_prompt) {
            (Some(o), _) => o.text.clone(),
            (None, Some(prompt)) => self.final_completion(agent, prompt, turn, &order, &outputs),
            (None, None) => concatenate(&order, &outputs),
        };
        Ok((text, outputs))
    }

    fn final_completion(
        &self,
        agent: &AgentDefinition,
        prompt: &str,
        turn: &Turn<'_>,
        order: &[String],
        outputs: &BTreeMap<String, SkillOutput>,
    ) -> String {
        let context = concatenate(order, outputs);
        let mut messages = vec![Message::system(format!("{prompt}\n\nSkill outputs:\n{context}"))];
        messages.extend(turn.history.iter().filter(|m| m.role != Role::System).cloned());
        messages.push(Message::user(turn.question));
        match self.provider.complete(&CompletionRequest::new(final_task(&agent.name), messages)) {
            Ok(c) => c.into_text(),
            Err(e) => {
                warn!(agent = %agent.name, error = %e, "final completion failed, returning skill outputs");
                context
            }
        }
    }
}

fn validate(req: &ChatRequest) -> Result<Turn<'_>, OrchestratorError> {
    let question = req.question.trim();
    if question.is_empty() && req.skill_data.is_none() {
        return Err(OrchestratorError::InvalidRequest("question is empty and no skill_data is attached".into()));
    }
    let mut history = req.messages.clone();
    let last_user = history.iter().rposition(|m| m.role == Role::User);
    let asked = !question.is_empty() && last_user.is_some_and(|i| history[i].content.trim() == question);
    if asked && last_user == Some(history.len() - 1) {
        history.pop();
        return Ok(Turn { history, question, asked: false });
    }
    Ok(Turn { history, question, asked })
}

fn run_skill(skill: &RegisteredSkill, args: &Map<String, Value>, ctx: &SkillContext<'_>) -> SkillOutput {
    match skill.runner.run(&skill.def, args, ctx) {
        Ok(mut out) => {
            out.skill = skill.def.name.clone();
            out
        }
        Err(e) => {
            warn!(skill = %skill.def.name, error = %e, "skill failed");
            SkillOutput::failed(&skill.def.name, e)
        }
    }
}

/// Replaces `{{skill}}` in string arguments with that skill's output text.
fn substitute(args: &Map<String, Value>, done: &BTreeMap<String, SkillOutput>) -> Map<String, Value> {
    args.iter()
        .map(|(k, v)| {
            let v = match v.as_str() {
                Some(s) if s.contains("{{") => {
                    Value::String(done.iter().fold(s.to_string(), |acc, (name, out)| acc.replace(&format!("{{{{{name}}}}}"), &out.text)))
                }
                _ => v.clone(),
            };
            (k.clone(), v)
        })
        .collect()
}

fn concatenate(order: &[String], outputs: &BTreeMap<String, SkillOutput>) -> String {
    order
        .iter()
        .map(|n| &outputs[n])
        .filter(|o| o.succeeded() && !o.text.trim().is_empty())
        .map(|o| format!("## {}\n{}", o.skill, o.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Skill definitions and arguments as the record a selection completion
/// returns; handy for scripting.
pub fn selection_record(calls: &[(&str, Value)]) -> Value {
    json!({ "skills": calls.iter().map(|(n, a)| json!({"name": n, "args": a})).collect::<Vec<_>>() })
}

#[cfg(test)]
mod tests;
