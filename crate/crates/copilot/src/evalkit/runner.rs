use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use copilot_core::{DocKind, RerankWeights};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::*;
use crate::config::TenantConfig;
use crate::gateway::read_events;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Planner,
    Tsg,
    IncidentSimilarity,
    AnswerSimilarity,
    Online,
    Querygen,
}

/// Retrieval weights compared against the tenant's configured ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub weights: RerankWeights,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorSpec {
    pub kind: EvaluatorKind,
    /// Report name; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub cases: Option<PathBuf>,
    /// Minimum value of the evaluator's headline metric.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "one")]
    pub runs: usize,
    /// Synthetic documentation cases added to the file cases.
    #[serde(default)]
    pub synthetic: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variants: Vec<Variant>,
    /// Read online cases from the tenant's telemetry log.
    #[serde(default)]
    pub telemetry: bool,
    #[serde(default = "yes")]
    pub enabled: bool,
}

impl EvaluatorSpec {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| serde_json::to_value(self.kind).unwrap().as_str().unwrap().to_string())
    }

    fn headline(&self) -> &'static str {
        match self.kind {
            EvaluatorKind::Planner => "coverage",
            EvaluatorKind::Tsg => "recall",
            EvaluatorKind::IncidentSimilarity => "high_share",
            EvaluatorKind::AnswerSimilarity => "mean",
            EvaluatorKind::Online => "relevant_grounded_share",
            EvaluatorKind::Querygen => "exact_match",
        }
    }
}

fn reports_dir() -> PathBuf {
    PathBuf::from("reports")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Tenant configuration file.
    pub tenant: PathBuf,
    #[serde(default = "reports_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub evaluators: Vec<EvaluatorSpec>,
}

impl EvalConfig {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        let mut cfg: EvalConfig = toml::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut cfg.tenant);
        join(&mut cfg.output_dir);
        for e in &mut cfg.evaluators {
            if let Some(c) = &mut e.cases {
                join(c);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub kind: EvaluatorKind,
    pub metric_name: String,
    pub metric: Option<f64>,
    pub threshold: Option<f64>,
    pub passed: bool,
    pub details: Value,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

impl EvalReport {
    /// Human-readable summary.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let d = &self.details;
        let num = |k: &str| fmt_opt(d[k].as_f64());
        match self.kind {
            EvaluatorKind::Planner | EvaluatorKind::Tsg => {
                rows.push(("cases".into(), d["cases"].to_string()));
                for k in ["precision", "recall", "coverage"] {
                    rows.push((k.into(), num(k)));
                }
            }
            EvaluatorKind::IncidentSimilarity => {
                for (variant, c) in d["variants"].as_object().into_iter().flatten() {
                    rows.push((
                        variant.clone(),
                        format!("high {} medium {} low {} skipped {}", c["high"], c["medium"], c["low"], c["skipped"]),
                    ));
                }
            }
            EvaluatorKind::AnswerSimilarity => {
                rows.push(("pairs".into(), d["pairs"].to_string()));
                rows.push(("rated".into(), d["rated"].to_string()));
                rows.push(("mean".into(), num("mean")));
            }
            EvaluatorKind::Online => {
                for (cat, n) in d["categories"].as_object().into_iter().flatten() {
                    rows.push((cat.clone(), n.to_string()));
                }
            }
            EvaluatorKind::Querygen => {
                rows.push(("cases".into(), d["cases"].to_string()));
                rows.push(("exact_match".into(), num("exact_match")));
            }
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(10);
        let mut out = format!("{} ({:?})\n", self.name, self.kind);
        for (k, v) in rows {
            let _ = writeln!(out, "  {k:<width$}  {v}");
        }
        let verdict = match self.threshold {
            Some(t) => format!("{} {} >= {t}: {}", self.metric_name, fmt_opt(self.metric), if self.passed { "PASS" } else { "FAIL" }),
            None => format!("{} {}", self.metric_name, fmt_opt(self.metric)),
        };
        let _ = writeln!(out, "  {verdict}");
        out
    }
}

fn cases_of<T: DeserializeOwned>(spec: &EvaluatorSpec) -> Result<Vec<T>, EvalError> {
    match &spec.cases {
        Some(p) => read_jsonl(p),
        None => Err(EvalError::Config(format!("evaluator {} needs a cases file", spec.name()))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Runs one evaluator against a loaded tenant.
pub fn run_evaluator(spec: &EvaluatorSpec, tenant: &TenantConfig, o: &Orchestrator) -> Result<EvalReport, EvalError> {
    let retriever = || o.retriever().ok_or_else(|| EvalError::Config("tenant has no retriever".into()));
    let now = o.today();
    let (metric, details) = match spec.kind {
        EvaluatorKind::Planner => {
            let cases: Vec<PlannerCase> = cases_of(spec)?;
            let r = evaluate_planner(&cases, &execute_planner(o, &cases, spec.runs))?;
            (Some(r.coverage), to_value(&r))
        }
        EvaluatorKind::Tsg => {
            let retriever = retriever()?;
            let mut cases: Vec<TsgCase> = if spec.cases.is_some() { cases_of(spec)? } else { Vec::new() };
            if spec.synthetic > 0 {
                let index = retriever.index(DocKind::Tsg)?;
                let chunks: Vec<&DocumentChunk> = index.chunks().collect();
                cases.extend(synth_tsg_cases(&chunks, o.provider().as_ref(), spec.synthetic, spec.seed));
            }
            let r = evaluate_tsg(&cases, &execute_tsg(retriever, &cases, now)?)?;
            // without referenced sets, retrieval coverage is the headline
            (r.recall.or(Some(r.coverage)), to_value(&r))
        }
        EvaluatorKind::IncidentSimilarity => {
            let base = retriever()?;
            let cases: Vec<IncidentCase> = cases_of(spec)?;
            let mut execs = execute_incident_similarity(base, "configured", &cases, &o.source, now)?;
            for v in &spec.variants {
                let mut r = (**base).clone();
                r.config.weights = v.weights;
                r.config.validate()?;
                execs.extend(execute_incident_similarity(&r, &v.name, &cases, &o.source, now)?);
            }
            let r = evaluate_incident_similarity(&cases, &execs);
            let high = r.variants.get("configured").and_then(|c| (c.labeled() > 0).then(|| c.high as f64 / c.labeled() as f64));
            (high, to_value(&r))
        }
        EvaluatorKind::AnswerSimilarity => {
            let pairs: Vec<AnswerPair> = cases_of(spec)?;
            let threshold = spec.threshold.unwrap_or(DEFAULT_SIMILARITY_THRESHOLD);
            let r = evaluate_answer_similarity(&execute_answer_similarity(o.provider().as_ref(), &pairs)?, threshold)?;
            (r.mean, to_value(&r))
        }
        EvaluatorKind::Online => {
            let mut cases: Vec<OnlineCase> = if spec.cases.is_some() { cases_of(spec)? } else { Vec::new() };
            if spec.telemetry {
                let path = tenant.gateway.telemetry_dir.join(format!("{}.jsonl", tenant.name));
                let events = read_events(&path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
                cases.extend(online_cases_from_telemetry(&events));
            }
            let r = evaluate_online(&execute_online(o.provider().as_ref(), &cases));
            let share = (r.scored > 0).then(|| r.categories[&OnlineCategory::RelevantGrounded] as f64 / r.scored as f64);
            (share, to_value(&r))
        }
        EvaluatorKind::Querygen => {
            let cases: Vec<QueryGenCase> = cases_of(spec)?;
            let r = evaluate_querygen(&execute_querygen(retriever()?.querygen(), &cases))?;
            (Some(r.exact_match), to_value(&r))
        }
    };
    let threshold = match spec.kind {
        EvaluatorKind::AnswerSimilarity => Some(spec.threshold.unwrap_or(DEFAULT_SIMILARITY_THRESHOLD)),
        _ => spec.threshold,
    };
    let passed = match threshold {
        Some(t) => metric.is_some_and(|m| m >= t),
        None => true,
    };
    Ok(EvalReport { name: spec.name(), kind: spec.kind, metric_name: spec.headline().into(), metric, threshold, passed, details })
}

/// Runs every enabled evaluator and writes `<name>.json` and `<name>.txt`
/// per evaluator into the output directory.
pub fn run_eval(config: &EvalConfig) -> Result<Vec<EvalReport>, EvalError> {
    let tenant = TenantConfig::load(&config.tenant).map_err(|e| EvalError::Config(e.to_string()))?;
    let provider = tenant.build_provider().map_err(|e| EvalError::Config(e.to_string()))?;
    let o = tenant.orchestrator(provider).map_err(|e| EvalError::Config(e.to_string()))?;
    let io = |source, path: &Path| EvalError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(&config.output_dir).map_err(|e| io(e, &config.output_dir))?;
    let mut reports = Vec::new();
    for spec in config.evaluators.iter().filter(|e| e.enabled) {
        let report = run_evaluator(spec, &tenant, &o)?;
        let json_path = config.output_dir.join(format!("{}.json", report.name));
        let text = serde_json::to_string_pretty(&report).expect("reports serialize");
        std::fs::write(&json_path, text + "\n").map_err(|e| io(e, &json_path))?;
        let txt_path = config.output_dir.join(format!("{}.txt", report.name));
        std::fs::write(&txt_path, report.table()).map_err(|e| io(e, &txt_path))?;
        reports.push(report);
    }
    Ok(reports)
}
