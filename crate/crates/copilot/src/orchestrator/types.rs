use std::collections::BTreeMap;

use copilot_core::DocKind;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::provider::Message;
use crate::retrieval::RetrievedContext;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    /// Free-form semantic type shown to the model ("text", "incident id", ...).
    #[serde(default = "text_type", rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

fn text_type() -> String {
    "text".into()
}

impl ArgSpec {
    pub fn required(name: &str) -> Self {
        ArgSpec { name: name.into(), kind: text_type(), required: true, description: String::new() }
    }

    pub fn optional(name: &str) -> Self {
        ArgSpec { required: false, ..Self::required(name) }
    }
}

/// How a configured skill runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SkillKind {
    /// Retrieval over one corpus. Reads the `query` arg (falling back to the
    /// question); incidents also read `team` and `monitor`, guides read
    /// `incident_summary`.
    BuiltinRetrieval { corpus: DocKind },
    /// Drafts queries for a human to review in a plugin card.
    QueryGenerator {
        plugin: String,
        #[serde(default)]
        targets: Vec<String>,
    },
    /// Runs the queries a plugin card sends back.
    QueryExecutor { plugin: String },
    /// Renders `template` with `{{arg}}` placeholders, or the args as JSON.
    Echo {
        #[serde(default)]
        template: Option<String>,
    },
    /// Behavior registered in code.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDefinition {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub args: Vec<ArgSpec>,
    #[serde(default)]
    pub dependencies: Vec<String>,
    #[serde(default)]
    pub direct_return: bool,
    #[serde(flatten)]
    pub kind: SkillKind,
}

impl SkillDefinition {
    pub fn new(name: &str, kind: SkillKind) -> Self {
        SkillDefinition {
            name: name.into(),
            description: String::new(),
            args: Vec::new(),
            dependencies: Vec::new(),
            direct_return: false,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDefinition {
    pub name: String,
    pub description: String,
    pub skills: Vec<String>,
    /// Prompt for the closing completion over all skill outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_agent_hint: Option<String>,
    /// Worked skill-selection examples shown to the model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
}

/// The agent sequence of one conversation. It travels with every request
/// and response; the server keeps no copy.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPlan {
    pub agents: Vec<String>,
    /// Index of the next agent to run.
    pub cursor: usize,
    /// Rounds that executed an agent or a plugin skill.
    pub round: usize,
}

impl MetaPlan {
    pub fn next_agent(&self) -> Option<&str> {
        self.agents.get(self.cursor).map(String::as_str)
    }

    pub fn exhausted(&self) -> bool {
        self.cursor >= self.agents.len()
    }
}

/// Data attached to a skill output for a frontend plugin, and the shape a
/// plugin sends back as `skill_data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginData {
    pub kind: String,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutput {
    pub skill: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plugin_payload: Option<PluginData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved: Option<RetrievedContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SkillOutput {
    pub fn text(skill: &str, text: impl Into<String>) -> Self {
        SkillOutput {
            skill: skill.into(),
            text: text.into(),
            record: None,
            plugin_payload: None,
            retrieved: None,
            error: None,
        }
    }

    pub fn failed(skill: &str, error: impl Into<String>) -> Self {
        SkillOutput { error: Some(error.into()), ..Self::text(skill, "") }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub agent: Option<String>,
    pub agent_output: String,
    pub skill_outputs: BTreeMap<String, SkillOutput>,
    pub meta_plan: MetaPlan,
    pub terminated: bool,
}

/// One stateless chat round. `messages` is the conversation so far and may
/// already end with `question`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub messages: Vec<Message>,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_data: Option<PluginData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_plan: Option<MetaPlan>,
    #[serde(default)]
    pub tenant: String,
    /// Client-chosen conversation id, used only for telemetry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl ChatRequest {
    pub fn new(question: impl Into<String>) -> Self {
        ChatRequest {
            messages: Vec::new(),
            question: question.into(),
            user_id: String::new(),
            skill_data: None,
            meta_plan: None,
            tenant: String::new(),
            session_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub meta_plan: MetaPlan,
    pub selected_agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPayload {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub answer: String,
    pub skill_outputs: BTreeMap<String, SkillPayload>,
    pub planner_output: PlannerOutput,
    pub plugin_payloads: Vec<PluginData>,
    pub retrieved_contexts: Vec<RetrievedContext>,
    /// When false the client should send the next round.
    pub terminated: bool,
}

impl From<RoundResult> for ChatResponse {
    fn from(r: RoundResult) -> Self {
        let mut plugin_payloads = Vec::new();
        let mut retrieved_contexts = Vec::new();
        let mut skill_outputs = BTreeMap::new();
        for (name, out) in r.skill_outputs {
            plugin_payloads.extend(out.plugin_payload);
            retrieved_contexts.extend(out.retrieved);
            skill_outputs.insert(name, SkillPayload { text: out.text, record: out.record, error: out.error });
        }
        ChatResponse {
            answer: r.agent_output,
            skill_outputs,
            planner_output: PlannerOutput { meta_plan: r.meta_plan, selected_agent: r.agent },
            plugin_payloads,
            retrieved_contexts,
            terminated: r.terminated,
        }
    }
}

/// Incremental progress of one round, streamed to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StreamEvent {
    RoundStarted { round: usize },
    SkillCompleted { skill: String, output: SkillOutput },
    AgentOutput { agent: String, text: String },
    RoundComplete { response: ChatResponse },
    Error { error_id: String, message: String },
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::RoundStarted { .. } => "round_started",
            StreamEvent::SkillCompleted { .. } => "skill_completed",
            StreamEvent::AgentOutput { .. } => "agent_output",
            StreamEvent::RoundComplete { .. } => "round_complete",
            StreamEvent::Error { .. } => "error",
        }
    }
}
