use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::json;

use super::*;
use crate::provider::{
    Completion, EmbeddingVector, MatchScope, ProviderError, Reply, ScriptRule, ScriptedBehavior, ScriptedProvider,
};

/// Scripted provider that records the task label of every completion.
struct Recording {
    inner: ScriptedProvider,
    tasks: Mutex<Vec<String>>,
}

impl Provider for Recording {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        self.tasks.lock().unwrap().push(request.task.clone());
        self.inner.complete(request)
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.inner.embed(text)
    }
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
}

impl Recording {
    fn count(&self, task: &str) -> usize {
        self.tasks.lock().unwrap().iter().filter(|t| *t == task).count()
    }
}

fn rule(task: &str, pattern: Option<&str>, reply: Value) -> ScriptRule {
    ScriptRule {
        task: Some(task.into()),
        pattern: pattern.map(str::to_string),
        scope: MatchScope::LastUser,
        reply: match reply {
            Value::String(s) => Reply::Text(s),
            v => Reply::Record(v.as_object().unwrap().clone()),
        },
    }
}

fn recording(rules: Vec<ScriptRule>) -> Arc<Recording> {
    Arc::new(Recording {
        inner: ScriptedProvider::new(ScriptedBehavior { rules, ..Default::default() }).unwrap(),
        tasks: Mutex::new(Vec::new()),
    })
}

fn echo(name: &str, template: &str) -> SkillDefinition {
    SkillDefinition::new(name, SkillKind::Echo { template: Some(template.into()) })
}

fn agent(name: &str, skills: &[&str]) -> AgentDefinition {
    AgentDefinition {
        name: name.into(),
        description: format!("{name} description"),
        skills: skills.iter().map(|s| s.to_string()).collect(),
        final_prompt: None,
        next_agent_hint: None,
        examples: Vec::new(),
    }
}

fn failing(_: &SkillDefinition, _: &Map<String, Value>, _: &SkillContext<'_>) -> Result<SkillOutput, String> {
    Err("backend unavailable".into())
}

fn registry() -> Registry {
    let mut tsg = echo("get_tsg", "guide for {{user_intent}}");
    tsg.args = vec![ArgSpec::required("user_intent")];
    let icm = echo("get_icm", "incidents for {{user_intent}}");
    let mut kql = SkillDefinition::new(
        "kql_generator",
        SkillKind::QueryGenerator { plugin: "kql".into(), targets: vec!["logs".into()] },
    );
    kql.direct_return = true;
    let exec = SkillDefinition::new("kql_executor", SkillKind::QueryExecutor { plugin: "kql".into() });
    let broken = SkillDefinition::new("broken", SkillKind::Custom);
    let mut qa = agent("qa_agent", &["get_tsg", "get_icm", "broken"]);
    qa.final_prompt = Some("Answer from the skill outputs.".into());
    let kusto = agent("kusto_agent", &["kql_generator", "kql_executor"]);
    let code = agent("code_agent", &["get_icm"]);
    let custom: BTreeMap<String, Arc<dyn Skill>> = BTreeMap::from([("broken".to_string(), Arc::new(failing) as Arc<dyn Skill>)]);
    Registry::new(vec![qa, kusto, code], vec![tsg, icm, kql, exec, broken], custom).unwrap()
}

fn orchestrator(p: Arc<Recording>) -> Orchestrator {
    Orchestrator::new(registry(), p, OrchestratorConfig::default())
        .unwrap()
        .with_clock(Arc::new(FixedClock(NaiveDate::from_ymd_opt(2024, 5, 1).unwrap())))
}

fn base_rules() -> Vec<ScriptRule> {
    vec![
        rule(PLAN_TASK, Some("query my logs"), json!({"agents": ["kusto_agent"]})),
        rule(PLAN_TASK, Some("replication"), json!({"agents": ["qa_agent", "code_agent"]})),
        rule(PLAN_TASK, None, json!({"agents": ["qa_agent"]})),
        rule(TERMINATE_TASK, None, json!({"terminate": false})),
        rule(
            &select_task("qa_agent"),
            None,
            selection_record(&[("get_tsg", json!({"user_intent": "restart"})), ("get_icm", json!({"user_intent": "restart"}))]),
        ),
        rule(&select_task("kusto_agent"), None, selection_record(&[("kql_generator", json!({}))])),
        rule(&select_task("code_agent"), None, selection_record(&[("get_icm", json!({"user_intent": "lag"}))])),
        rule(
            "generate_query.kql_generator",
            None,
            json!({"queries": [{"query": "Logs | take 10", "target": "logs"}, {"query": "Errors | count"}]}),
        ),
        rule(&final_task("qa_agent"), None, json!("final answer")),
        rule(&final_task("code_agent"), None, json!("code answer")),
    ]
}

fn converse(o: &Orchestrator, question: &str) -> Vec<RoundResult> {
    let mut req = ChatRequest::new(question);
    req.messages.push(Message::user(question));
    let mut rounds = Vec::new();
    for _ in 0..20 {
        let r = o.run_round(&req).unwrap();
        req.meta_plan = Some(r.meta_plan.clone());
        if !r.agent_output.is_empty() {
            req.messages.push(Message::assistant(r.agent_output.clone()));
        }
        let done = r.terminated;
        rounds.push(r);
        if done {
            break;
        }
    }
    rounds
}

#[test]
fn single_agent_runs_then_terminates() {
    let p = recording(base_rules());
    let o = orchestrator(p.clone());
    let rounds = converse(&o, "how do I restart the gateway");
    assert_eq!(rounds.len(), 2);
    assert_eq!(rounds[0].agent.as_deref(), Some("qa_agent"));
    assert!(!rounds[0].terminated);
    assert_eq!(rounds[0].agent_output, "final answer");
    assert_eq!(rounds[0].meta_plan, MetaPlan { agents: vec!["qa_agent".into()], cursor: 1, round: 1 });
    assert!(rounds[1].terminated);
    assert!(rounds[1].agent.is_none());
    assert_eq!(p.count(TERMINATE_TASK), 0, "first round skips the check and the second is forced");
}

#[test]
fn two_agent_plan_runs_two_rounds() {
    let o = orchestrator(recording(base_rules()));
    let rounds = converse(&o, "replication lag on the primary");
    let agents: Vec<_> = rounds.iter().filter_map(|r| r.agent.clone()).collect();
    assert_eq!(agents, ["qa_agent", "code_agent"]);
    assert_eq!(rounds.len(), 3);
    assert_eq!(rounds.last().unwrap().meta_plan.round, 2);
}

#[test]
fn termination_decision_can_stop_early() {
    let mut rules = base_rules();
    rules.insert(0, ScriptRule { scope: MatchScope::Prompt, ..rule(TERMINATE_TASK, Some("final answer"), json!({"terminate": true})) });
    let o = orchestrator(recording(rules));
    let rounds = converse(&o, "replication lag on the primary");
    assert_eq!(rounds.len(), 2);
    assert!(rounds[1].terminated);
}

#[test]
fn adversarial_planner_is_bounded() {
    let mut rules = base_rules();
    rules.insert(0, rule(PLAN_TASK, None, json!({"agents": vec!["qa_agent"; 12]})));
    let o = orchestrator(recording(rules));
    let rounds = converse(&o, "anything");
    let executed = rounds.iter().filter(|r| r.agent.is_some()).count();
    assert_eq!(executed, 5);
    assert!(rounds.last().unwrap().terminated);
    assert!(rounds.iter().all(|r| r.meta_plan.agents.len() <= 5 && r.meta_plan.round <= 5));
}

#[test]
fn unknown_agent_falls_back_after_retry() {
    let mut rules = base_rules();
    rules.insert(0, rule(PLAN_TASK, None, json!({"agents": ["ghost_agent"]})));
    let p = recording(rules);
    let o = orchestrator(p.clone());
    let plan = o.plan_meta(&[Message::user("hi")], &MetaPlan::default());
    assert_eq!(plan.agents, ["qa_agent"]);
    assert_eq!(p.count(PLAN_TASK), 2);
}

#[test]
fn running_plan_survives_contradicting_proposal() {
    let o = orchestrator(recording(base_rules()));
    let prior = MetaPlan { agents: vec!["kusto_agent".into(), "code_agent".into()], cursor: 1, round: 1 };
    assert_eq!(o.plan_meta(&[Message::user("other")], &prior), prior);
    let prior = MetaPlan { agents: vec!["qa_agent".into()], cursor: 1, round: 1 };
    assert_eq!(o.plan_meta(&[Message::user("replication")], &prior).agents, ["qa_agent", "code_agent"]);
}

#[test]
fn termination_rules() {
    let o = orchestrator(recording(vec![]));
    let convo = [Message::user("q")];
    let plan = |cursor, round| MetaPlan { agents: vec!["qa_agent".into(); 2], cursor, round };
    assert!(!o.decide_termination(&convo, &plan(0, 0)));
    assert!(o.decide_termination(&convo, &plan(1, 5)));
    assert!(o.decide_termination(&convo, &plan(2, 2)));
    assert!(o.decide_termination(&convo, &plan(1, 1)), "provider failure stops");
}

#[test]
fn selection_drops_foreign_and_incomplete_skills() {
    let rules = vec![rule(
        &select_task("qa_agent"),
        None,
        selection_record(&[("get_tsg", json!({})), ("get_icm", json!({"user_intent": "x"})), ("kql_generator", json!({}))]),
    )];
    let p = recording(rules);
    let o = orchestrator(p.clone());
    let calls = o.select_skills(o.registry().agent("qa_agent").unwrap(), &[], "q");
    assert_eq!(calls.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["get_icm"]);
    assert_eq!(p.count(&select_task("qa_agent")), 2);
}

#[test]
fn direct_return_skips_final_completion() {
    let p = recording(base_rules());
    let o = orchestrator(p.clone());
    let r = o.run_round(&ChatRequest::new("please query my logs")).unwrap();
    assert_eq!(r.agent.as_deref(), Some("kusto_agent"));
    let gen = &r.skill_outputs["kql_generator"];
    assert_eq!(r.agent_output, gen.text);
    assert_eq!(gen.plugin_payload.as_ref().unwrap().kind, "kql");
    assert_eq!(p.tasks.lock().unwrap().iter().filter(|t| t.starts_with("final.")).count(), 0);
}

#[test]
fn final_prompt_called_once_and_failures_recorded() {
    let mut rules = base_rules();
    rules[4] = rule(
        &select_task("qa_agent"),
        None,
        selection_record(&[("get_tsg", json!({"user_intent": "restart"})), ("broken", json!({}))]),
    );
    let p = recording(rules);
    let o = orchestrator(p.clone());
    let r = o.run_round(&ChatRequest::new("restart")).unwrap();
    assert_eq!(p.count(&final_task("qa_agent")), 1);
    assert_eq!(r.agent_output, "final answer");
    assert_eq!(r.skill_outputs["broken"].error.as_deref(), Some("backend unavailable"));
    assert_eq!(r.skill_outputs["get_tsg"].text, "guide for restart");
}

#[test]
fn plugin_round_trip_executes_reviewed_queries() {
    let p = recording(base_rules());
    let o = orchestrator(p.clone());
    let first = o.run_round(&ChatRequest::new("query my logs")).unwrap();
    let mut data = first.skill_outputs["kql_generator"].plugin_payload.clone().unwrap();
    data.data["queries"][0]["query"] = json!("Logs | where Level == 'Error'");
    data.data["queries"][1]["include"] = json!(false);
    let mut req = ChatRequest::new("");
    req.skill_data = Some(data);
    req.meta_plan = Some(first.meta_plan.clone());
    let r = o.run_round(&req).unwrap();
    let exec = &r.skill_outputs["kql_executor"];
    assert_eq!(exec.record.as_ref().unwrap()["executed"], json!([{"query": "Logs | where Level == 'Error'", "target": "logs"}]));
    assert_eq!(r.meta_plan.round, first.meta_plan.round + 1);
    assert_eq!(r.meta_plan.cursor, first.meta_plan.cursor);
    assert_eq!(p.count(PLAN_TASK), 1, "plugin rounds skip planning");

    req.skill_data.as_mut().unwrap().kind = "sql".into();
    assert!(matches!(o.run_round(&req), Err(OrchestratorError::UnknownPlugin(_))));
}

#[test]
fn invalid_requests_rejected() {
    let o = orchestrator(recording(base_rules()));
    assert!(matches!(o.run_round(&ChatRequest::new("  ")), Err(OrchestratorError::InvalidRequest(_))));
    let mut req = ChatRequest::new("q");
    req.meta_plan = Some(MetaPlan { agents: vec![], cursor: 2, round: 0 });
    assert!(matches!(o.run_round(&req), Err(OrchestratorError::InvalidRequest(_))));
}

#[test]
fn identical_requests_give_identical_results() {
    let o = orchestrator(recording(base_rules()));
    let req = ChatRequest::new("how do I restart the gateway");
    let a = serde_json::to_string(&ChatResponse::from(o.run_round(&req).unwrap())).unwrap();
    let b = serde_json::to_string(&ChatResponse::from(o.run_round(&req).unwrap())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stages_follow_dependencies() {
    let mk = |n: &str, deps: &[&str]| SkillDefinition {
        dependencies: deps.iter().map(|d| d.to_string()).collect(),
        ..echo(n, n)
    };
    let skills = vec![mk("a", &[]), mk("b", &["a"]), mk("c", &["b"]), mk("d", &[])];
    let reg = Registry::new(vec![agent("qa_agent", &["a", "b", "c", "d"])], skills, BTreeMap::new()).unwrap();
    assert_eq!(reg.stages(&["a", "b", "c", "d"]).unwrap(), vec![vec!["a", "d"], vec!["b"], vec!["c"]]);
    assert_eq!(reg.stages(&["b", "a"]).unwrap(), vec![vec!["a"], vec!["b"]]);
    assert_eq!(reg.stages(&["c", "d"]).unwrap(), vec![vec!["c", "d"]]);

    let cyclic = vec![mk("a", &["b"]), mk("b", &["a"])];
    assert!(matches!(
        Registry::new(vec![agent("x", &["a", "b"])], cyclic, BTreeMap::new()),
        Err(OrchestratorError::Registry(_))
    ));
}

#[test]
fn registry_validation() {
    let dup = vec![echo("a", ""), echo("a", "")];
    assert!(Registry::new(vec![], dup, BTreeMap::new()).is_err());
    assert!(Registry::new(vec![agent("x", &["missing"])], vec![], BTreeMap::new()).is_err());
    let custom = SkillDefinition::new("c", SkillKind::Custom);
    assert!(Registry::new(vec![], vec![custom], BTreeMap::new()).is_err());
    let mut args = echo("e", "");
    args.args = vec![ArgSpec::required("x"), ArgSpec::optional("x")];
    assert!(Registry::new(vec![], vec![args], BTreeMap::new()).is_err());
}

#[test]
fn upstream_output_substituted_into_args() {
    let mut summary = echo("summary", "{{summary}} summarized");
    summary.dependencies = vec!["lookup".into()];
    let skills = vec![echo("lookup", "INC42 disk full"), summary];
    let reg = Registry::new(vec![agent("qa_agent", &["lookup", "summary"])], skills, BTreeMap::new()).unwrap();
    let o = Orchestrator::new(reg, recording(vec![]), OrchestratorConfig::default()).unwrap();
    let calls = vec![
        SkillCall { name: "summary".into(), args: json!({"summary": "[{{lookup}}]"}).as_object().unwrap().clone() },
        SkillCall { name: "lookup".into(), args: Map::new() },
    ];
    let agent = o.registry().agent("qa_agent").unwrap().clone();
    let (text, outputs) = o.execute_agent_with(&agent, &[], "q", Some(calls), &|_| {}).unwrap();
    assert_eq!(outputs["summary"].text, "[INC42 disk full] summarized");
    assert_eq!(text, "## lookup\nINC42 disk full\n\n## summary\n[INC42 disk full] summarized");
}

#[test]
fn same_stage_skills_overlap_and_events_stream() {
    let sleepy = |_: &SkillDefinition, _: &Map<String, Value>, _: &SkillContext<'_>| -> Result<SkillOutput, String> {
        std::thread::sleep(Duration::from_millis(50));
        Ok(SkillOutput::text("", "done"))
    };
    let names = ["s1", "s2", "s3", "s4"];
    let custom: BTreeMap<String, Arc<dyn Skill>> =
        names.iter().map(|n| (n.to_string(), Arc::new(sleepy) as Arc<dyn Skill>)).collect();
    let skills = names.iter().map(|n| SkillDefinition::new(n, SkillKind::Custom)).collect();
    let reg = Registry::new(vec![agent("qa_agent", &names)], skills, custom).unwrap();
    let o = Orchestrator::new(reg, recording(vec![]), OrchestratorConfig::default()).unwrap();
    let calls: Vec<SkillCall> = names.iter().map(|n| SkillCall { name: n.to_string(), args: Map::new() }).collect();
    let agent = o.registry().agent("qa_agent").unwrap().clone();
    let events = AtomicUsize::new(0);
    let start = Instant::now();
    let (_, outputs) = o
        .execute_agent_with(&agent, &[], "q", Some(calls), &|e| {
            assert_eq!(e.name(), "skill_completed");
            events.fetch_add(1, Ordering::SeqCst);
        })
        .unwrap();
    assert!(start.elapsed() < Duration::from_millis(100));
    assert_eq!(outputs.len(), 4);
    assert_eq!(events.load(Ordering::SeqCst), 4);
}

#[test]
fn stream_events_in_order() {
    let o = orchestrator(recording(base_rules()));
    let seen = Mutex::new(Vec::new());
    o.run_round_streaming(&ChatRequest::new("restart"), &|e| seen.lock().unwrap().push(e.name())).unwrap();
    let seen = seen.into_inner().unwrap();
    assert_eq!(seen.first(), Some(&"round_started"));
    assert_eq!(&seen[seen.len() - 2..], ["agent_output", "round_complete"]);
    assert_eq!(seen.iter().filter(|e| **e == "skill_completed").count(), 2);
}

#[test]
fn wire_shapes() {
    let e = StreamEvent::RoundStarted { round: 0 };
    assert_eq!(serde_json::to_value(&e).unwrap(), json!({"event": "round_started", "round": 0}));
    let def: SkillDefinition = serde_json::from_value(json!({
        "name": "get_icm", "kind": "builtin-retrieval", "corpus": "icm",
        "args": [{"name": "user_intent", "required": true}]
    }))
    .unwrap();
    assert_eq!(def.kind, SkillKind::BuiltinRetrieval { corpus: copilot_core::DocKind::Icm });
    assert_eq!(def.args[0].kind, "text");
    let req: ChatRequest = serde_json::from_value(json!({"question": "q"})).unwrap();
    assert_eq!(req, ChatRequest::new("q"));
}
