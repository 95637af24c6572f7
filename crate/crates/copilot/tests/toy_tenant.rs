mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use copilot::gateway::client::ChatSession;
use copilot::orchestrator::{ChatResponse, Orchestrator};
use walkdir::WalkDir;

use common::{scenario, toy_config, toy_dir, toy_orchestrator};

/// Runs a question to termination, approving generated queries unchanged.
fn converse(o: &Orchestrator, question: &str) -> Vec<ChatResponse> {
    let mut session = ChatSession::new("toy", "tester", "s1");
    let mut req = session.ask(question);
    let mut out = Vec::new();
    for _ in 0..10 {
        let resp = ChatResponse::from(o.run_round(&req).unwrap());
        session.absorb(&resp);
        out.push(resp.clone());
        if let Some(p) = resp.plugin_payloads.first() {
            req = session.submit(p.clone());
            continue;
        }
        if resp.terminated {
            return out;
        }
        req = session.next();
    }
    panic!("conversation did not terminate");
}

#[test]
fn scenario_questions_run_expected_agents_and_retrieve_golden_documents() {
    let work = tempfile::tempdir().unwrap();
    let (_, o) = toy_orchestrator(work.path());
    for case in scenario() {
        let rounds = converse(&o, &case.question);
        let agents: Vec<String> = rounds.iter().filter_map(|r| r.planner_output.selected_agent.clone()).collect();
        assert_eq!(agents, case.agents, "{}", case.id);
        let skills: BTreeSet<String> = rounds.iter().flat_map(|r| r.skill_outputs.keys().cloned()).collect();
        assert!(case.golden_skills.is_subset(&skills), "{}: {skills:?}", case.id);
        let retrieved: BTreeSet<String> =
            rounds.iter().flat_map(|r| r.retrieved_contexts.iter()).flat_map(|c| c.ids()).map(str::to_string).collect();
        assert!(case.golden_docs.is_subset(&retrieved), "{}: {retrieved:?}", case.id);
        let last = rounds.last().unwrap();
        assert!(last.terminated);
        assert!(last.planner_output.meta_plan.round <= o.config.max_rounds);
    }
}

#[test]
fn two_agent_question_takes_two_agent_rounds() {
    let work = tempfile::tempdir().unwrap();
    let (_, o) = toy_orchestrator(work.path());
    let case = scenario().into_iter().find(|c| c.id == "lag").unwrap();
    let rounds = converse(&o, &case.question);
    assert_eq!(rounds.last().unwrap().planner_output.meta_plan.round, 2);
    assert!(rounds[0].answer.contains("replication-lag.md#0"));
    assert!(!rounds[0].terminated);
}

#[test]
fn log_question_round_trips_reviewed_queries() {
    let work = tempfile::tempdir().unwrap();
    let (_, o) = toy_orchestrator(work.path());
    let rounds = converse(&o, "Query my logs for relay errors in the last hour.");
    let payload = &rounds[0].plugin_payloads[0];
    assert_eq!(payload.kind, "kql");
    let executed = rounds[1].skill_outputs["kql_executor"].record.as_ref().unwrap();
    let sent: Vec<&str> = payload.data["queries"].as_array().unwrap().iter().map(|q| q["query"].as_str().unwrap()).collect();
    let ran: Vec<&str> = executed["executed"].as_array().unwrap().iter().map(|q| q["query"].as_str().unwrap()).collect();
    assert_eq!(sent, ran);
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(dir).unwrap().display().to_string(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn rebuilding_indexes_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    toy_orchestrator(a.path());
    toy_orchestrator(b.path());
    let first = snapshot(&a.path().join("index"));
    assert!(first.len() >= 6);
    assert_eq!(first, snapshot(&b.path().join("index")));
    // a rerun over an existing index yields the same files
    toy_orchestrator(a.path());
    assert_eq!(first, snapshot(&a.path().join("index")));
}

#[test]
fn ingest_reports_chunk_counts() {
    let work = tempfile::tempdir().unwrap();
    let cfg = toy_config(work.path());
    let reports = cfg.ingest(cfg.build_provider().unwrap(), &cfg.kinds()).unwrap();
    let counts: Vec<(String, usize)> = reports.iter().map(|r| (r.kind.to_string(), r.chunks)).collect();
    assert_eq!(counts, [("tsg".to_string(), 12), ("icm".to_string(), 10), ("code".to_string(), 8)]);
    assert!(reports.iter().all(|r| r.skipped.is_empty()));
}

fn cli(work: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_copilot"));
    c.env_remove("COPILOT_CONFIG")
        .env_remove("COPILOT_TOKEN")
        .env("COPILOT_INDEX_DIR", work.join("index"))
        .env("COPILOT_TELEMETRY_DIR", work.join("telemetry"))
        .env("COPILOT_LOG", "error");
    c
}

#[test]
fn cli_missing_config_exits_with_config_error() {
    let work = tempfile::tempdir().unwrap();
    let out = cli(work.path()).args(["--config", "/nonexistent/tenant.toml", "ingest"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/tenant.toml"));
}

#[test]
fn cli_ingest_chat_feedback_and_stats() {
    let work = tempfile::tempdir().unwrap();
    let config = toy_dir().join("tenant.toml");
    let config = config.to_str().unwrap();
    let out = cli(work.path()).args(["--config", config, "ingest", "--kind", "tsg"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "tsg: indexed 12 chunks from 12 records");

    let out = cli(work.path()).args(["--config", config, "ingest"]).output().unwrap();
    assert!(out.status.success());

    let mut child = cli(work.path())
        .args(["--config", config, "chat"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"Replication lag on the primary database keeps growing. How do I fix it and which code handles replication?\n/feedback 4 helpful\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let qa = text.find("[qa_agent]").unwrap();
    let code = text.find("[code_agent]").unwrap();
    assert!(qa < code, "{text}");
    assert!(text.contains("feedback recorded"));

    let out = cli(work.path()).args(["--config", config, "stats", "--json"]).output().unwrap();
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["sessions"], 1);
    assert_eq!(stats["messages"], 1);
    assert_eq!(stats["logins"], 1);
    assert_eq!(stats["feedback_count"], 1);
    assert_eq!(stats["avg_stars"], 4.0);
}

#[test]
fn cli_eval_passes_and_fails_on_thresholds() {
    let work = tempfile::tempdir().unwrap();
    let config = toy_dir().join("tenant.toml");
    assert!(cli(work.path()).args(["--config", config.to_str().unwrap(), "ingest"]).status().unwrap().success());

    let eval = work.path().join("eval.toml");
    let toy = toy_dir();
    let write = |threshold: f64| {
        std::fs::write(
            &eval,
            format!(
                "tenant = \"{}\"\noutput_dir = \"reports\"\n\n[[evaluators]]\nkind = \"planner\"\ncases = \"{}\"\nthreshold = 1.0\n\n[[evaluators]]\nkind = \"answer_similarity\"\ncases = \"{}\"\nthreshold = {threshold}\n",
                toy.join("tenant.toml").display(),
                toy.join("eval/planner.jsonl").display(),
                toy.join("eval/answers.jsonl").display(),
            ),
        )
        .unwrap();
    };
    write(4.0);
    let out = cli(work.path()).args(["eval", eval.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["planner.json", "planner.txt", "answer_similarity.json", "answer_similarity.txt"] {
        assert!(work.path().join("reports").join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.path().join("reports/answer_similarity.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);

    write(4.9);
    let out = cli(work.path()).args(["eval", eval.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    std::fs::write(&eval, format!("tenant = \"{}\"\n[[evaluators]]\nkind = \"planner\"\ncases = \"missing.jsonl\"\n", toy.join("tenant.toml").display())).unwrap();
    let out = cli(work.path()).args(["eval", eval.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}
