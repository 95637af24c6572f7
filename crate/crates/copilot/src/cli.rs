//! Operator entry point: `ingest`, `serve`, `chat`, `eval` and `stats`.
//!
//! Exit codes are 0 on success, 1 when a command fails at runtime or an
//! evaluation misses its threshold, and 2 when configuration cannot be
//! loaded.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use copilot_core::DocKind;
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, TenantConfig};
use crate::evalkit::{run_eval, EvalConfig, EvalError};
use crate::gateway::client::{ChatSession, GatewayClient};
use crate::gateway::{self, compute_stats, read_events, record_round, AppState, FeedbackRequest, StatsReport, TelemetryEvent, TelemetryKind, TelemetrySink, TenantRuntime};
use crate::orchestrator::{ChatRequest, ChatResponse, Orchestrator, PluginData, StreamEvent};

#[derive(Debug, Parser)]
#[command(name = "copilot", version, about = "Retrieval-augmented copilot for operations teams")]
pub struct Cli {
    /// Tenant configuration file; repeat to serve several tenants.
    #[arg(long, global = true, env = "COPILOT_CONFIG", value_delimiter = ',')]
    pub config: Vec<PathBuf>,
    /// Tenant to act on when several are loaded or when talking to a gateway.
    #[arg(long, global = true)]
    pub tenant: Option<String>,
    /// More log output; repeat for debug logs.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build indexes from the configured sources.
    Ingest {
        /// Only these kinds (tsg, icm, code); all configured kinds by default.
        #[arg(long)]
        kind: Vec<DocKind>,
    },
    /// Run the HTTP gateway until interrupted.
    Serve {
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Interactive chat on stdin. Lines starting with `/feedback N` rate the
    /// last answer; `/new` starts a new conversation; `/quit` exits.
    Chat(ChatArgs),
    /// Run the evaluators listed in an evaluation config.
    Eval {
        eval_config: PathBuf,
    },
    /// Usage statistics from the telemetry log.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Talk to a running gateway instead of an in-process engine.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long, env = "COPILOT_TOKEN")]
    pub token: Option<String>,
    #[arg(long, default_value = "cli")]
    pub user: String,
    /// Ask these questions in order and exit.
    #[arg(short, long)]
    pub question: Vec<String>,
    /// Run generated queries without asking.
    #[arg(long)]
    pub approve_queries: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long, env = "COPILOT_TOKEN")]
    pub token: Option<String>,
    #[arg(long)]
    pub since: Option<DateTime<Utc>>,
    #[arg(long)]
    pub until: Option<DateTime<Utc>>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
    #[error("{0} evaluator(s) below threshold")]
    Threshold(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Threshold(_) => 1,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.into()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(anyhow::anyhow!("{e}"))
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("COPILOT_LOG").unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn load_tenants(cli: &Cli) -> Result<Vec<TenantConfig>, CliError> {
    let paths = if cli.config.is_empty() { vec![PathBuf::from("copilot.toml")] } else { cli.config.clone() };
    let tenants = paths.iter().map(|p| TenantConfig::load(p)).collect::<Result<Vec<_>, _>>()?;
    let mut names = std::collections::BTreeSet::new();
    if let Some(t) = tenants.iter().find(|t| !names.insert(t.name.clone())) {
        return Err(CliError::Usage(format!("tenant `{}` configured twice", t.name)));
    }
    Ok(tenants)
}

fn pick(cli: &Cli, tenants: Vec<TenantConfig>) -> Result<TenantConfig, CliError> {
    match &cli.tenant {
        Some(name) => tenants
            .into_iter()
            .find(|t| &t.name == name)
            .ok_or_else(|| CliError::Usage(format!("no configuration for tenant `{name}`"))),
        None if tenants.len() == 1 => Ok(tenants.into_iter().next().expect("one tenant")),
        None => Err(CliError::Usage("several tenants loaded; pick one with --tenant".into())),
    }
}

/// Runs a parsed command line. Interactive input comes from `input`;
/// everything meant for the user goes to `out`.
pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest { kind } => ingest(pick(&cli, load_tenants(&cli)?)?, kind, out),
        Command::Serve { bind } => serve(load_tenants(&cli)?, bind.clone(), out),
        Command::Eval { eval_config } => eval(eval_config, out),
        Command::Chat(args) => {
            if let Some(url) = &args.url {
                let client = GatewayClient::new(url, args.token.clone());
                let tenant = cli.tenant.clone().unwrap_or_default();
                chat_loop(&Remote(client), &tenant, args, input, out)
            } else {
                let cfg = pick(&cli, load_tenants(&cli)?)?;
                let local = Local::new(&cfg)?;
                chat_loop(&local, &cfg.name, args, input, out)
            }
        }
        Command::Stats(args) => stats(&cli, args, out),
    }
}

fn ingest(cfg: TenantConfig, kinds: &[DocKind], out: &mut dyn Write) -> Result<(), CliError> {
    let kinds = if kinds.is_empty() { cfg.kinds() } else { kinds.to_vec() };
    if let Some(k) = kinds.iter().find(|k| !cfg.sources.iter().any(|s| s.kind == **k)) {
        return Err(CliError::Usage(format!("no {k} source configured for tenant `{}`", cfg.name)));
    }
    if kinds.is_empty() {
        return Err(CliError::Usage(format!("tenant `{}` has no sources", cfg.name)));
    }
    let provider = cfg.build_provider()?;
    let reports = cfg.ingest(provider, &kinds).map_err(runtime)?;
    for r in reports {
        writeln!(out, "{}: indexed {} chunks from {} records", r.kind, r.chunks, r.records).map_err(runtime)?;
        if !r.skipped.is_empty() {
            writeln!(out, "{}: skipped {}", r.kind, r.skipped.join(", ")).map_err(runtime)?;
        }
        if r.rechunk_fallbacks > 0 {
            writeln!(out, "{}: {} sections kept their original chunking", r.kind, r.rechunk_fallbacks).map_err(runtime)?;
        }
    }
    Ok(())
}

fn serve(tenants: Vec<TenantConfig>, bind: Option<String>, out: &mut dyn Write) -> Result<(), CliError> {
    let bind = bind.unwrap_or_else(|| tenants[0].gateway.bind.clone());
    let mut runtimes = BTreeMap::new();
    for cfg in &tenants {
        let provider = cfg.build_provider()?;
        let orchestrator = Arc::new(cfg.orchestrator(provider)?);
        let telemetry = TelemetrySink::open(&cfg.gateway.telemetry_dir, &cfg.name).map_err(runtime)?;
        runtimes.insert(
            cfg.name.clone(),
            TenantRuntime {
                orchestrator,
                token: cfg.gateway.token.clone(),
                telemetry: Arc::new(telemetry),
                conversation_detail: cfg.gateway.conversation_detail,
            },
        );
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| runtime(format!("binding {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(runtime)?;
        writeln!(out, "listening on http://{addr}").map_err(runtime)?;
        out.flush().map_err(runtime)?;
        gateway::serve(listener, AppState::new(runtimes)).await.map_err(runtime)
    })
}

fn eval(path: &std::path::Path, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = EvalConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    let reports = run_eval(&cfg)?;
    let mut failed = 0;
    for r in &reports {
        write!(out, "{}", r.table()).map_err(runtime)?;
        failed += usize::from(!r.passed);
    }
    writeln!(out, "reports written to {}", cfg.output_dir.display()).map_err(runtime)?;
    if failed > 0 {
        return Err(CliError::Threshold(failed));
    }
    Ok(())
}

fn stats(cli: &Cli, args: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = match &args.url {
        Some(url) => {
            let client = GatewayClient::new(url, args.token.clone());
            client.stats(cli.tenant.as_deref().unwrap_or_default()).map_err(runtime)?
        }
        None => {
            let cfg = pick(cli, load_tenants(cli)?)?;
            let path = cfg.gateway.telemetry_dir.join(format!("{}.jsonl", cfg.name));
            compute_stats(&read_events(&path).map_err(runtime)?, args.since, args.until)
        }
    };
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(runtime)?).map_err(runtime)?;
    } else {
        print_stats(&report, out).map_err(runtime)?;
    }
    Ok(())
}

fn print_stats(r: &StatsReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "sessions            {}", r.sessions)?;
    writeln!(out, "logins              {}", r.logins)?;
    writeln!(out, "messages            {}", r.messages)?;
    writeln!(out, "rounds              {} ({} failed)", r.rounds, r.failed_rounds)?;
    writeln!(out, "rounds per session  {:.2}", r.avg_rounds_per_session)?;
    writeln!(out, "feedback            {} (avg stars {:.2})", r.feedback_count, r.avg_stars)?;
    let l = &r.latency_ms;
    writeln!(out, "latency ms          p50 {} p90 {} p99 {}", l.p50, l.p90, l.p99)
}

/// Where chat rounds run.
trait Backend {
    fn round(&self, req: &ChatRequest, on_event: &(dyn Fn(&StreamEvent) + Sync)) -> anyhow::Result<ChatResponse>;
    fn feedback(&self, fb: &FeedbackRequest) -> anyhow::Result<()>;
}

struct Remote(GatewayClient);

impl Backend for Remote {
    fn round(&self, req: &ChatRequest, on_event: &(dyn Fn(&StreamEvent) + Sync)) -> anyhow::Result<ChatResponse> {
        Ok(self.0.chat(req, on_event)?)
    }

    fn feedback(&self, fb: &FeedbackRequest) -> anyhow::Result<()> {
        Ok(self.0.feedback(fb)?)
    }
}

struct Local {
    name: String,
    orchestrator: Orchestrator,
    telemetry: TelemetrySink,
    conversation_detail: bool,
}

impl Local {
    fn new(cfg: &TenantConfig) -> Result<Self, CliError> {
        let provider = cfg.build_provider()?;
        Ok(Local {
            name: cfg.name.clone(),
            orchestrator: cfg.orchestrator(provider)?,
            telemetry: TelemetrySink::open(&cfg.gateway.telemetry_dir, &cfg.name).map_err(runtime)?,
            conversation_detail: cfg.gateway.conversation_detail,
        })
    }
}

impl Backend for Local {
    fn round(&self, req: &ChatRequest, on_event: &(dyn Fn(&StreamEvent) + Sync)) -> anyhow::Result<ChatResponse> {
        self.orchestrator.check_request(req)?;
        let started = Instant::now();
        let out = self.orchestrator.run_round_streaming(req, &|e| on_event(&e));
        let outcome = out.as_ref().map_err(|_| "");
        record_round(&self.name, &self.telemetry, self.conversation_detail, req, outcome, started);
        Ok(ChatResponse::from(out?))
    }

    fn feedback(&self, fb: &FeedbackRequest) -> anyhow::Result<()> {
        let stars = TelemetryEvent::new(TelemetryKind::FeedbackStars, &fb.tenant, &fb.session_id, &fb.user_id, json!({ "stars": fb.stars }));
        self.telemetry.append(&stars)?;
        if let Some(text) = fb.text.as_deref().filter(|t| !t.trim().is_empty()) {
            let ev = TelemetryEvent::new(TelemetryKind::FeedbackText, &fb.tenant, &fb.session_id, &fb.user_id, json!({ "text": text }));
            self.telemetry.append(&ev)?;
        }
        Ok(())
    }
}

fn render_event(e: &StreamEvent, out: &mut dyn Write) -> std::io::Result<()> {
    match e {
        StreamEvent::RoundStarted { round } => writeln!(out, "-- round {round}")?,
        StreamEvent::SkillCompleted { skill, output } => match &output.error {
            Some(err) => writeln!(out, "   {skill}: failed ({err})")?,
            None => writeln!(out, "   {skill}: done")?,
        },
        StreamEvent::AgentOutput { agent, text } => writeln!(out, "[{agent}]\n{}\n", text.trim_end())?,
        StreamEvent::RoundComplete { response } if response.terminated => writeln!(out, "-- done")?,
        StreamEvent::RoundComplete { .. } => {}
        StreamEvent::Error { error_id, message } => writeln!(out, "!! {message} ({error_id})")?,
    }
    out.flush()
}

/// Prints generated queries and asks whether to run them.
fn review(payload: &PluginData, approve: bool, input: &mut dyn BufRead, out: &mut dyn Write) -> std::io::Result<Option<PluginData>> {
    let n = payload.data["queries"].as_array().map_or(0, Vec::len);
    if approve {
        writeln!(out, "running {n} {} queries", payload.kind)?;
        return Ok(Some(payload.clone()));
    }
    write!(out, "run these {n} {} queries? [y/N] ", payload.kind)?;
    out.flush()?;
    let mut line = String::new();
    input.read_line(&mut line)?;
    Ok(matches!(line.trim(), "y" | "Y" | "yes").then(|| payload.clone()))
}

fn chat_loop(backend: &dyn Backend, tenant: &str, args: &ChatArgs, input: &mut dyn BufRead, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut session = ChatSession::new(tenant, &args.user, &uuid::Uuid::new_v4().to_string());
    let mut scripted = args.question.iter().cloned();
    let interactive = args.question.is_empty();
    loop {
        let line = if interactive {
            write!(out, "> ").map_err(runtime)?;
            out.flush().map_err(runtime)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(runtime)? == 0 {
                return Ok(());
            }
            line.trim().to_string()
        } else {
            match scripted.next() {
                Some(q) => q,
                None => return Ok(()),
            }
        };
        if line.is_empty() {
            continue;
        }
        if line == "/quit" || line == "/exit" {
            return Ok(());
        }
        if line == "/new" {
            session = ChatSession::new(tenant, &args.user, &uuid::Uuid::new_v4().to_string());
            continue;
        }
        if let Some(rest) = line.strip_prefix("/feedback") {
            let mut parts = rest.trim().splitn(2, ' ');
            let stars = parts.next().and_then(|s| s.parse::<u8>().ok()).filter(|s| (1..=5).contains(s));
            let Some(stars) = stars else {
                writeln!(out, "usage: /feedback <1-5> [comment]").map_err(runtime)?;
                continue;
            };
            let fb = FeedbackRequest {
                tenant: session.tenant.clone(),
                user_id: session.user_id.clone(),
                session_id: session.session_id.clone(),
                stars,
                text: parts.next().map(str::to_string),
            };
            match backend.feedback(&fb) {
                Ok(()) => writeln!(out, "thanks, feedback recorded").map_err(runtime)?,
                Err(e) => writeln!(out, "!! feedback failed: {e}").map_err(runtime)?,
            }
            continue;
        }
        let mut req = session.ask(&line);
        loop {
            let shared = Mutex::new(&mut *out);
            let printer = |e: &StreamEvent| {
                let mut w = shared.lock().unwrap_or_else(|p| p.into_inner());
                let _ = render_event(e, &mut **w);
            };
            let resp = backend.round(&req, &printer);
            drop(shared);
            let resp = match resp {
                Ok(r) => r,
                Err(e) => {
                    writeln!(out, "!! round failed: {e}").map_err(runtime)?;
                    break;
                }
            };
            session.absorb(&resp);
            if let Some(payload) = resp.plugin_payloads.first() {
                if let Some(data) = review(payload, args.approve_queries, input, out).map_err(runtime)? {
                    req = session.submit(data);
                    continue;
                }
            }
            if resp.terminated {
                break;
            }
            req = session.next();
        }
    }
}

/// Parses the process arguments, runs and maps the outcome to an exit code.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout();
    match run(cli, &mut input, &mut out) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(e.exit_code())
        }
    }
}
