//! Planner, Analyst and Critic nodes plus routing. Scripted backends need no
//! model endpoint; remote backends speak the chat-completions protocol and
//! are always checked against the CSV.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use wakeprobe_core::coverage::{
    coverage_status, partition_windows, scripted_suggestions, CoverageError, SpacingAttempt, Window, WindowStatus,
    SUGGESTION_QUANTUM,
};
use wakeprobe_core::discovery::{best_per_spacing, EvidenceRow};
use wakeprobe_core::field::{detect_cylinder_centers, extract_profile, time_average, DEFAULT_GEOMETRY_TOLERANCE};
use wakeprobe_core::metrics::{best_point, sweep_probes, MetricMode, OptimumPoint, PrimaryMetric, ProfileSource, SweepSpec};
use wakeprobe_core::rng::mix_seed;
use wakeprobe_core::surrogate::{SPACING_MAX, SPACING_MIN};

use crate::evidence::{fmt_g9, EvidenceError, EvidenceStore, ResultRow};
use crate::llm::{extract_json, ChatBackend, ChatMessage, ChatSettings, LlmError};
use crate::surrogate::{FlowGenerator, GenerateError, SurrogateSpec};

/// Completions that fail to parse are re-requested this many times.
pub const REPROMPTS: usize = 2;
/// Tool calls the remote Critic may make per verdict.
pub const MAX_TOOL_CALLS: usize = 8;
/// Agreement required between a claimed value and the CSV.
pub const GROUNDING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("surrogate unavailable: {0}")]
    SurrogateUnavailable(String),
    #[error("language model unavailable: {0}")]
    LlmUnavailable(LlmError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmSpec {
    Scripted,
    Remote(ChatSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub metric: PrimaryMetric,
    pub spacing_range: (f64, f64),
    pub window_width: f64,
    pub sweep: SweepSpec,
    pub max_iterations: u32,
    pub geometry_tolerance: f64,
    /// Failed attempts after which a window counts as exhausted.
    pub retry_budget: usize,
    pub n_frames: usize,
    pub surrogate: SurrogateSpec,
    pub llm: LlmSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            metric: PrimaryMetric::DeltaStar,
            spacing_range: (SPACING_MIN, SPACING_MAX),
            window_width: 1.0,
            sweep: SweepSpec::default(),
            max_iterations: 10,
            geometry_tolerance: DEFAULT_GEOMETRY_TOLERANCE,
            retry_budget: 2,
            n_frames: 16,
            surrogate: SurrogateSpec::default(),
            llm: LlmSpec::Scripted,
            seed: 0,
            out_dir: PathBuf::from("campaign"),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.window_width > 0.0) {
            return bad("window_width must be positive");
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1");
        }
        if !(self.geometry_tolerance >= 0.0) {
            return bad("geometry_tolerance must be non-negative");
        }
        if !(self.sweep.step > 0.0) || self.sweep.ny_quadrature < 2 {
            return bad("sweep step must be positive and ny_quadrature at least 2");
        }
        self.windows()?;
        Ok(())
    }

    pub fn mode(&self) -> MetricMode {
        MetricMode::for_metric(self.metric)
    }

    pub fn windows(&self) -> Result<Vec<Window>, AgentError> {
        Ok(partition_windows(self.spacing_range, self.window_width)?)
    }

    /// Seed used for the surrogate call at `spacing`.
    pub fn spacing_seed(&self, spacing: f64) -> u64 {
        mix_seed(self.seed, (spacing / SUGGESTION_QUANTUM).round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub suggested_ds: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Solved,
    NeedsRefinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub window: String,
    pub lo: f64,
    pub hi: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub status: VerdictStatus,
    pub refinements: Vec<Refinement>,
    pub invalid_spacings: Vec<f64>,
    #[serde(default)]
    pub grounding_violations: Vec<String>,
    /// Notes from a remote Critic; never decisive on their own.
    #[serde(default)]
    pub advisory: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Planner,
    Analyst,
    Critic,
    Writer,
    Done,
}

/// One agent event; the campaign mirrors these into `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub iteration: u32,
    pub node: Node,
    pub event: String,
    pub detail: Value,
}

impl Event {
    pub fn new(iteration: u32, node: Node, event: &str, detail: Value) -> Self {
        Self { iteration, node, event: event.into(), detail }
    }
}

/// A spacing the surrogate could not deliver; it counts as a failed attempt
/// for its window even though it left no rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub iteration: u32,
    pub spacing: f64,
    pub reason: String,
}

/// Per-spacing attempts seen by coverage: CSV spacings with validity
/// recomputed from the error columns, plus row-less failures.
pub fn attempts(rows: &[ResultRow], failed: &[FailedAttempt], tolerance: f64) -> Vec<SpacingAttempt> {
    let mut out: Vec<SpacingAttempt> = Vec::new();
    for r in rows {
        let valid = r.recomputed_valid(tolerance);
        match out.iter_mut().find(|a| a.spacing == r.spacing) {
            Some(a) => a.valid &= valid,
            None => out.push(SpacingAttempt { spacing: r.spacing, valid }),
        }
    }
    for f in failed {
        if !out.iter().any(|a| a.spacing == f.spacing) {
            out.push(SpacingAttempt { spacing: f.spacing, valid: false });
        }
    }
    out
}

fn known_spacing(known: &[SpacingAttempt], s: f64) -> bool {
    known.iter().any(|a| (a.spacing - s).abs() < 0.5 * SUGGESTION_QUANTUM)
}

/// Moves `s` to the nearest free quantized spacing inside `w`.
fn free_spacing(w: &Window, s: f64, known: &[SpacingAttempt]) -> Option<f64> {
    let q = 1.0 / SUGGESTION_QUANTUM;
    let steps = (w.width() * q).round() as i64 + 1;
    for k in 0..=steps {
        for sign in [1.0, -1.0] {
            let c = ((s * q).round() + sign * k as f64) / q;
            if w.contains(c) && !known_spacing(known, c) {
                return Some(c);
            }
            if k == 0 {
                break;
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageView {
    pub windows: Vec<Window>,
    pub status: Vec<WindowStatus>,
    pub attempts: Vec<SpacingAttempt>,
}

impl CoverageView {
    pub fn compute(cfg: &CampaignConfig, rows: &[ResultRow], failed: &[FailedAttempt]) -> Result<Self, AgentError> {
        let windows = cfg.windows()?;
        let attempts = attempts(rows, failed, cfg.geometry_tolerance);
        let status = coverage_status(&attempts, &windows, cfg.retry_budget);
        Ok(Self { windows, status, attempts })
    }

    pub fn gaps(&self) -> impl Iterator<Item = &Window> {
        self.windows.iter().zip(&self.status).filter(|(_, s)| **s == WindowStatus::Gap).map(|(w, _)| w)
    }

    pub fn summary(&self) -> Value {
        Value::Array(
            self.windows
                .iter()
                .zip(&self.status)
                .map(|(w, s)| json!({"window": w.label(), "status": s}))
                .collect(),
        )
    }
}

fn valid_optima(rows: &[ResultRow], cfg: &CampaignConfig) -> Vec<OptimumPoint> {
    let ev: Vec<EvidenceRow> = rows.iter().map(|r| r.evidence(cfg.geometry_tolerance)).collect();
    best_per_spacing(&ev, &cfg.mode()).unwrap_or_default()
}

/// Seeded midpoint-plus-jitter suggestion for every gap window, nudged off
/// spacings that were already tried.
pub fn scripted_plan(cfg: &CampaignConfig, cov: &CoverageView, iteration: u32) -> PlannerOutput {
    let raw = scripted_suggestions(&cov.windows, &cov.status, cfg.seed, iteration as u64);
    let gaps: Vec<&Window> = cov.gaps().collect();
    let suggested_ds = raw
        .into_iter()
        .zip(gaps)
        .filter_map(|(s, w)| free_spacing(w, s, &cov.attempts))
        .collect::<Vec<_>>();
    PlannerOutput { done: cov.gaps().next().is_none(), suggested_ds }
}

pub fn planner_prompt(cfg: &CampaignConfig, cov: &CoverageView, rows: &[ResultRow]) -> Vec<ChatMessage> {
    let metric = match cfg.metric {
        PrimaryMetric::DeltaStar => "minimize displacement thickness delta_star",
        PrimaryMetric::Theta => "maximize momentum thickness theta",
    };
    let mut windows = String::new();
    for (w, s) in cov.windows.iter().zip(&cov.status) {
        windows.push_str(&format!("- {} {}\n", w.label(), serde_json::to_string(s).unwrap_or_default()));
    }
    let mut best = String::new();
    for o in valid_optima(rows, cfg) {
        best.push_str(&format!("- S = {}: x_p* = {}, value = {}\n", fmt_g9(o.spacing), fmt_g9(o.x_star), fmt_g9(o.value)));
    }
    if best.is_empty() {
        best.push_str("- none yet\n");
    }
    let system = format!(
        "You are the Planner of a wake-exploration campaign over cylinder spacing S in [{}, {}] D. \
         Goal: {metric} over probe stations. The range is split into windows of width {} D, each \
         COVERED, GAP or EXHAUSTED. Suggest one new S value per GAP window, strictly inside it, \
         avoiding spacings already tried. If all windows are COVERED or EXHAUSTED, set done to true. \
         Reply with JSON only: {{\"suggested_ds\": [numbers], \"done\": boolean}}.",
        fmt_g9(cfg.spacing_range.0),
        fmt_g9(cfg.spacing_range.1),
        fmt_g9(cfg.window_width)
    );
    let user = format!("Window status:\n{windows}Best station per valid spacing:\n{best}");
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Planner node. A remote backend gets [`REPROMPTS`] extra chances to
/// produce parseable JSON before the scripted plan is used instead.
pub fn planner_step(
    cfg: &CampaignConfig,
    iteration: u32,
    rows: &[ResultRow],
    failed: &[FailedAttempt],
    backend: Option<&mut dyn ChatBackend>,
    events: &mut Vec<Event>,
) -> Result<PlannerOutput, AgentError> {
    let cov = CoverageView::compute(cfg, rows, failed)?;
    let ev = |e: &str, d: Value| Event::new(iteration, Node::Planner, e, d);
    let Some(backend) = backend else {
        let out = scripted_plan(cfg, &cov, iteration);
        events.push(ev("plan", json!({"backend": "scripted", "output": out, "coverage": cov.summary()})));
        return Ok(out);
    };
    let mut messages = planner_prompt(cfg, &cov, rows);
    for attempt in 0..=REPROMPTS {
        let reply = backend.complete(&messages).map_err(|e| match e {
            LlmError::Unavailable { .. } => AgentError::LlmUnavailable(e),
            other => AgentError::LlmUnavailable(other),
        })?;
        if let Some(out) = extract_json::<PlannerOutput>(&reply) {
            let accepted = accept_suggestions(&cov, &out.suggested_ds);
            if accepted.len() < out.suggested_ds.len() {
                events.push(ev("warning", json!({"dropped_suggestions": out.suggested_ds.len() - accepted.len()})));
            }
            let out = PlannerOutput { suggested_ds: accepted, done: out.done && cov.gaps().next().is_none() };
            events.push(ev("plan", json!({"backend": "remote", "attempt": attempt, "output": out})));
            return Ok(out);
        }
        events.push(ev("parse_failure", json!({"attempt": attempt, "reply": truncate(&reply, 400)})));
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user("Reply with a single JSON object {\"suggested_ds\": [...], \"done\": ...} and nothing else."));
    }
    let out = scripted_plan(cfg, &cov, iteration);
    events.push(ev("warning", json!({"fallback": "scripted", "reason": "unparseable planner replies", "output": out})));
    Ok(out)
}

/// Keeps suggestions that land in a gap window on an untried spacing,
/// quantized to the suggestion grid.
fn accept_suggestions(cov: &CoverageView, raw: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &s in raw {
        if !s.is_finite() {
            continue;
        }
        let q = (s / SUGGESTION_QUANTUM).round() * SUGGESTION_QUANTUM;
        let q = (q * 100.0).round() / 100.0;
        let in_gap = cov.gaps().any(|w| w.contains(q));
        if in_gap && !known_spacing(&cov.attempts, q) && !out.contains(&q) {
            out.push(q);
        }
    }
    out
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalystReport {
    pub rows: Vec<ResultRow>,
    pub failed: Vec<FailedAttempt>,
    pub skipped: Vec<f64>,
}

/// Rows for one spacing: generate, average, locate the cylinders, sweep.
pub fn evaluate_spacing(
    cfg: &CampaignConfig,
    generator: &dyn FlowGenerator,
    spacing: f64,
    iteration: u32,
) -> Result<Vec<ResultRow>, GenerateError> {
    let seed = cfg.spacing_seed(spacing);
    let frames = generator.generate(spacing, cfg.n_frames, seed)?;
    let mean = time_average(&frames).map_err(|e| GenerateError::Decode(e.to_string()))?;
    let geometry = detect_cylinder_centers(&mean, [(0.0, 0.0), (spacing, 0.0)], cfg.geometry_tolerance);
    // upstream inlet column: the undisturbed reference profile
    let reference = extract_profile(&mean, mean.grid.x0, Some(cfg.sweep.ny_quadrature))
        .map_err(|e| GenerateError::Decode(e.to_string()))?;
    let analytic = generator.profile_source(spacing);
    let source: &dyn ProfileSource = match &analytic {
        Some(s) => s.as_ref(),
        None => &mean,
    };
    let results = sweep_probes(source, spacing, &cfg.sweep, &cfg.mode(), Some(&reference), geometry)
        .map_err(|e| GenerateError::InvalidParameter(e.to_string()))?;
    Ok(results
        .into_iter()
        .map(|r| ResultRow {
            iteration,
            spacing,
            x_p: r.x_p,
            delta_star: r.metrics.delta_star,
            theta: r.metrics.theta,
            e_l2: r.metrics.e_l2,
            e_cos: r.metrics.e_cos,
            j: r.metrics.j,
            cyl1_error_d: r.geometry.cyl1_error_d,
            cyl2_error_d: r.geometry.cyl2_error_d,
            geom_valid: r.geometry.valid,
            seed,
        })
        .collect())
}

/// Analyst node. Rows of every evaluated spacing are sorted by
/// `(spacing, x_p)` and appended in one atomic write. An unavailable
/// surrogate stops the batch after saving what was already computed.
pub fn analyst_step(
    cfg: &CampaignConfig,
    generator: &dyn FlowGenerator,
    store: &EvidenceStore,
    iteration: u32,
    suggestions: &[f64],
    failed_before: &[FailedAttempt],
    events: &mut Vec<Event>,
) -> Result<AnalystReport, AgentError> {
    let existing = store.read()?;
    let mut known = attempts(&existing, failed_before, cfg.geometry_tolerance);
    let mut report = AnalystReport::default();
    let ev = |e: &str, d: Value| Event::new(iteration, Node::Analyst, e, d);
    let mut abort = None;
    for &s in suggestions {
        if known_spacing(&known, s) {
            report.skipped.push(s);
            events.push(ev("skip_duplicate", json!({"spacing": s})));
            continue;
        }
        match evaluate_spacing(cfg, generator, s, iteration) {
            Ok(rows) => {
                let valid = rows.first().is_some_and(|r| r.geom_valid);
                events.push(ev("evaluated", json!({"spacing": s, "rows": rows.len(), "geom_valid": valid})));
                known.push(SpacingAttempt { spacing: s, valid });
                report.rows.extend(rows);
            }
            Err(GenerateError::Unavailable(reason)) => {
                events.push(ev("surrogate_unavailable", json!({"spacing": s, "reason": reason})));
                abort = Some(reason);
                break;
            }
            Err(e) => {
                events.push(ev("attempt_failed", json!({"spacing": s, "reason": e.to_string()})));
                known.push(SpacingAttempt { spacing: s, valid: false });
                report.failed.push(FailedAttempt { iteration, spacing: s, reason: e.to_string() });
            }
        }
    }
    report.rows.sort_by(|a, b| a.spacing.total_cmp(&b.spacing).then(a.x_p.total_cmp(&b.x_p)));
    if !report.rows.is_empty() {
        store.append(&report.rows)?;
    }
    match abort {
        Some(reason) => Err(AgentError::SurrogateUnavailable(reason)),
        None => Ok(report),
    }
}

/// A best-value assertion made by a remote Critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestClaim {
    pub spacing: f64,
    pub x_p: f64,
    #[serde(default)]
    pub value: Option<f64>,
}

/// Checks each claim against the CSV's best station for that spacing.
pub fn grounding_violations(claims: &[BestClaim], rows: &[ResultRow], cfg: &CampaignConfig) -> Vec<String> {
    let mode = cfg.mode();
    let mut out = Vec::new();
    for c in claims {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| (r.spacing - c.spacing).abs() <= GROUNDING_TOLERANCE && r.recomputed_valid(cfg.geometry_tolerance))
            .map(|r| (r.x_p, mode.primary_value_of(r)))
            .collect();
        let Some((bx, bv)) = best_point(&pts, &mode) else {
            out.push(format!("claimed spacing {} has no valid rows in the CSV", c.spacing));
            continue;
        };
        if (bx - c.x_p).abs() > GROUNDING_TOLERANCE {
            out.push(format!("spacing {}: claimed best x_p {} but the CSV gives {}", c.spacing, c.x_p, bx));
        }
        if let Some(v) = c.value {
            if (v - bv).abs() > GROUNDING_TOLERANCE {
                out.push(format!("spacing {}: claimed best value {} but the CSV gives {}", c.spacing, v, bv));
            }
        }
    }
    out
}

trait RowMetric {
    fn primary_value_of(&self, r: &ResultRow) -> f64;
}

impl RowMetric for MetricMode {
    fn primary_value_of(&self, r: &ResultRow) -> f64 {
        match self.primary {
            PrimaryMetric::DeltaStar => r.delta_star,
            PrimaryMetric::Theta => r.theta,
        }
    }
}

/// Verdict from the CSV and failure log alone.
pub fn scripted_verdict(cfg: &CampaignConfig, cov: &CoverageView, iteration: u32) -> CriticVerdict {
    let invalid_spacings: Vec<f64> = cov.attempts.iter().filter(|a| !a.valid).map(|a| a.spacing).collect();
    let refinements: Vec<Refinement> = cov
        .gaps()
        .map(|w| {
            let failed = cov.attempts.iter().any(|a| !a.valid && w.contains(a.spacing));
            Refinement {
                window: w.label(),
                lo: w.lo,
                hi: w.hi,
                reason: if failed { "geometry_or_generation_failure" } else { "uncovered" }.into(),
            }
        })
        .collect();
    let solved = refinements.is_empty() || iteration >= cfg.max_iterations;
    CriticVerdict {
        status: if solved { VerdictStatus::Solved } else { VerdictStatus::NeedsRefinement },
        refinements,
        invalid_spacings,
        grounding_violations: Vec::new(),
        advisory: Vec::new(),
    }
}

#[derive(Debug, Clone, Deserialize)]
struct CriticReply {
    action: String,
    #[serde(default)]
    status: Option<VerdictStatus>,
    #[serde(default)]
    best_claims: Vec<BestClaim>,
    #[serde(default)]
    notes: Option<String>,
}

fn critic_prompt(cfg: &CampaignConfig, cov: &CoverageView, iteration: u32) -> Vec<ChatMessage> {
    let system = format!(
        "You are the Critic of a wake-exploration campaign (iteration {iteration} of at most {}). \
         Mark geometrically invalid spacings (cyl1_error_D or cyl2_error_D above {} D) as unreliable. \
         If all windows are COVERED or EXHAUSTED the campaign is solved. Only cite values that appear \
         in the CSV. Tools: read_csv_file returns the evidence CSV. Reply with one JSON object: \
         {{\"action\": \"read_csv_file\"}} to call the tool, or {{\"action\": \"final\", \"status\": \
         \"solved\"|\"needs_refinement\", \"best_claims\": [{{\"spacing\", \"x_p\", \"value\"}}], \"notes\": string}}.",
        cfg.max_iterations,
        fmt_g9(cfg.geometry_tolerance)
    );
    let user = format!("Window status: {}", cov.summary());
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Critic node. The scripted verdict is always computed; a remote Critic
/// can add advisory notes or demand refinement, and any best-value claim it
/// makes must match the CSV to [`GROUNDING_TOLERANCE`].
pub fn critic_step(
    cfg: &CampaignConfig,
    iteration: u32,
    store: &EvidenceStore,
    failed: &[FailedAttempt],
    backend: Option<&mut dyn ChatBackend>,
    events: &mut Vec<Event>,
) -> Result<CriticVerdict, AgentError> {
    let rows = store.read()?;
    let mismatched: Vec<f64> = rows
        .iter()
        .filter(|r| r.geom_valid != r.recomputed_valid(cfg.geometry_tolerance))
        .map(|r| r.spacing)
        .collect();
    if !mismatched.is_empty() {
        events.push(Event::new(iteration, Node::Critic, "validity_flag_mismatch", json!({"spacings": mismatched})));
    }
    let cov = CoverageView::compute(cfg, &rows, failed)?;
    let mut verdict = scripted_verdict(cfg, &cov, iteration);
    if let Some(backend) = backend {
        remote_review(cfg, &cov, iteration, store, &rows, backend, &mut verdict, events)?;
    }
    events.push(Event::new(iteration, Node::Critic, "verdict", json!({"verdict": verdict, "coverage": cov.summary()})));
    Ok(verdict)
}

#[allow(clippy::too_many_arguments)]
fn remote_review(
    cfg: &CampaignConfig,
    cov: &CoverageView,
    iteration: u32,
    store: &EvidenceStore,
    rows: &[ResultRow],
    backend: &mut dyn ChatBackend,
    verdict: &mut CriticVerdict,
    events: &mut Vec<Event>,
) -> Result<(), AgentError> {
    let mut messages = critic_prompt(cfg, cov, iteration);
    let (mut tool_calls, mut parse_failures) = (0usize, 0usize);
    loop {
        let reply = backend.complete(&messages).map_err(AgentError::LlmUnavailable)?;
        messages.push(ChatMessage::assistant(reply.clone()));
        let Some(parsed) = extract_json::<CriticReply>(&reply) else {
            parse_failures += 1;
            events.push(Event::new(iteration, Node::Critic, "parse_failure", json!({"reply": truncate(&reply, 400)})));
            if parse_failures > REPROMPTS {
                verdict.advisory.push("remote critic replies unparseable; scripted verdict used".into());
                return Ok(());
            }
            messages.push(ChatMessage::user("Reply with a single JSON object as specified."));
            continue;
        };
        match parsed.action.as_str() {
            "read_csv_file" => {
                if tool_calls == MAX_TOOL_CALLS {
                    verdict.advisory.push(format!("remote critic exceeded {MAX_TOOL_CALLS} tool calls; scripted verdict used"));
                    return Ok(());
                }
                tool_calls += 1;
                let text = std::fs::read_to_string(store.path()).unwrap_or_default();
                events.push(Event::new(iteration, Node::Critic, "tool_call", json!({"tool": "read_csv_file", "n": tool_calls})));
                messages.push(ChatMessage::user(format!("Observation (read_csv_file):\n{text}")));
            }
            "final" => {
                let violations = grounding_violations(&parsed.best_claims, rows, cfg);
                if !violations.is_empty() {
                    events.push(Event::new(iteration, Node::Critic, "grounding_violation", json!({"violations": violations})));
                    verdict.grounding_violations.extend(violations);
                    verdict.status = VerdictStatus::NeedsRefinement;
                }
                if parsed.status == Some(VerdictStatus::NeedsRefinement) {
                    verdict.status = VerdictStatus::NeedsRefinement;
                }
                if let Some(n) = parsed.notes {
                    verdict.advisory.push(n);
                }
                return Ok(());
            }
            other => {
                parse_failures += 1;
                if parse_failures > REPROMPTS {
                    verdict.advisory.push(format!("remote critic requested unknown action {other:?}; scripted verdict used"));
                    return Ok(());
                }
                messages.push(ChatMessage::user(format!("Unknown action {other:?}. Use read_csv_file or final.")));
            }
        }
    }
}

/// Where the graph goes after the Critic. `None` means the iteration budget
/// is spent without any evidence to report.
pub fn route(iteration: u32, max_iterations: u32, verdict: &CriticVerdict, csv_rows: usize) -> Option<Node> {
    let finished = verdict.status == VerdictStatus::Solved || iteration >= max_iterations;
    match (finished, csv_rows > 0) {
        (true, true) => Some(Node::Writer),
        (_, false) if iteration >= max_iterations => None,
        _ => Some(Node::Planner),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(status: VerdictStatus) -> CriticVerdict {
        CriticVerdict { status, refinements: vec![], invalid_spacings: vec![], grounding_violations: vec![], advisory: vec![] }
    }

    #[test]
    fn routing_table() {
        assert_eq!(route(1, 10, &verdict(VerdictStatus::Solved), 26), Some(Node::Writer));
        assert_eq!(route(10, 10, &verdict(VerdictStatus::NeedsRefinement), 26), Some(Node::Writer));
        assert_eq!(route(3, 10, &verdict(VerdictStatus::NeedsRefinement), 26), Some(Node::Planner));
        assert_eq!(route(10, 10, &verdict(VerdictStatus::NeedsRefinement), 0), None);
        assert_eq!(route(2, 10, &verdict(VerdictStatus::Solved), 0), Some(Node::Planner));
    }

    #[test]
    fn scripted_plan_targets_only_gaps() {
        let cfg = CampaignConfig { seed: 3, ..CampaignConfig::default() };
        let windows = cfg.windows().unwrap();
        let mut status = vec![WindowStatus::Covered; 7];
        status[0] = WindowStatus::Gap;
        status[4] = WindowStatus::Gap;
        let cov = CoverageView { windows: windows.clone(), status, attempts: vec![] };
        let a = scripted_plan(&cfg, &cov, 1);
        assert_eq!(a, scripted_plan(&cfg, &cov, 1));
        assert_eq!(a.suggested_ds.len(), 2);
        assert!(windows[0].contains(a.suggested_ds[0]) && windows[4].contains(a.suggested_ds[1]));
        assert!(!a.done);
        let all = CoverageView { windows, status: vec![WindowStatus::Covered; 7], attempts: vec![] };
        let b = scripted_plan(&cfg, &all, 1);
        assert!(b.done && b.suggested_ds.is_empty());
    }

    #[test]
    fn free_spacing_avoids_tried_values() {
        let w = Window { lo: 3.5, hi: 4.5, closed: false };
        let tried = [SpacingAttempt { spacing: 4.0, valid: false }];
        let s = free_spacing(&w, 4.0, &tried).unwrap();
        assert!((s - 4.01).abs() < 1e-12);
        assert_eq!(free_spacing(&w, 3.7, &tried), Some(3.7));
    }

    #[test]
    fn accept_filters_out_of_gap_and_duplicates() {
        let cfg = CampaignConfig::default();
        let windows = cfg.windows().unwrap();
        let mut status = vec![WindowStatus::Covered; 7];
        status[2] = WindowStatus::Gap;
        let cov = CoverageView { windows, status, attempts: vec![SpacingAttempt { spacing: 6.0, valid: false }] };
        assert_eq!(accept_suggestions(&cov, &[5.8, 5.8, 6.0, 4.0, f64::NAN, 12.0]), vec![5.8]);
    }
}
