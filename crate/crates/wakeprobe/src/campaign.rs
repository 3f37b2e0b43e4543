//! The campaign graph: Planner → Analyst → Critic → (Planner | Writer).
//! State is checkpointed to `state.json` after every node so an aborted
//! run resumes where it stopped; every agent event is appended to
//! `log.jsonl`.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{
    analyst_step, critic_step, planner_step, route, AgentError, CampaignConfig, CriticVerdict, Event, FailedAttempt,
    LlmSpec, Node,
};
use crate::evidence::{EvidenceError, EvidenceStore};
use crate::llm::{ChatBackend, HttpChat, API_KEY_ENV, BASE_URL_ENV};
use crate::report::{generate_report, ReportArtifacts, ReportError};
use crate::surrogate::{FlowGenerator, GenerateError};

pub const CSV_FILE: &str = "results.csv";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Generator(#[from] GenerateError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: unreadable campaign state: {reason}")]
    State { path: PathBuf, reason: String },
    #[error("{0} holds a completed campaign; choose a new output directory")]
    AlreadyCompleted(PathBuf),
    #[error("cannot resume {path}: {field} differs from the saved configuration")]
    ConfigMismatch { path: PathBuf, field: &'static str },
    #[error("iteration budget of {0} spent without any evidence rows")]
    NoEvidence(u32),
    #[error("remote language model configured but no base URL (set {BASE_URL_ENV} or llm.base_url)")]
    MissingLlmUrl,
}

impl From<EvidenceError> for CampaignError {
    fn from(e: EvidenceError) -> Self {
        Self::Agent(AgentError::Evidence(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub config: CampaignConfig,
    pub iteration: u32,
    pub status: RunStatus,
    pub next: Node,
    pub pending: Vec<f64>,
    pub failed: Vec<FailedAttempt>,
    pub last_verdict: Option<CriticVerdict>,
    pub abort_reason: Option<String>,
}

impl CampaignState {
    fn fresh(config: CampaignConfig) -> Self {
        Self {
            config,
            iteration: 0,
            status: RunStatus::Running,
            next: Node::Planner,
            pending: Vec::new(),
            failed: Vec::new(),
            last_verdict: None,
            abort_reason: None,
        }
    }
}

/// Fields that must agree between a saved state and the config resuming it.
fn resume_conflict(saved: &CampaignConfig, new: &CampaignConfig) -> Option<&'static str> {
    if saved.metric != new.metric {
        return Some("metric");
    }
    if saved.spacing_range != new.spacing_range {
        return Some("spacing_range");
    }
    if saved.window_width != new.window_width {
        return Some("window_width");
    }
    if saved.sweep != new.sweep {
        return Some("sweep");
    }
    if saved.geometry_tolerance != new.geometry_tolerance {
        return Some("geometry_tolerance");
    }
    if saved.seed != new.seed {
        return Some("seed");
    }
    if saved.n_frames != new.n_frames {
        return Some("n_frames");
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub iterations: u32,
    pub csv: PathBuf,
    pub report: ReportArtifacts,
    pub verdict: Option<CriticVerdict>,
}

pub struct Campaign {
    state: CampaignState,
    generator: Box<dyn FlowGenerator>,
    planner: Option<Box<dyn ChatBackend>>,
    critic: Option<Box<dyn ChatBackend>>,
    out_dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io { path: path.to_path_buf(), source }
}

/// Chat backend for a remote LLM spec. The base URL falls back to the
/// environment; the key only ever comes from it.
pub fn chat_backend(spec: &LlmSpec, env: &HashMap<String, String>) -> Result<Option<Box<dyn ChatBackend>>, CampaignError> {
    let LlmSpec::Remote(settings) = spec else {
        return Ok(None);
    };
    let mut settings = settings.clone();
    if settings.base_url.is_empty() {
        settings.base_url = env.get(BASE_URL_ENV).cloned().unwrap_or_default();
    }
    if settings.base_url.is_empty() {
        return Err(CampaignError::MissingLlmUrl);
    }
    let key = env.get(API_KEY_ENV).filter(|k| !k.is_empty()).cloned();
    Ok(Some(Box::new(HttpChat::new(settings, key))))
}

impl Campaign {
    /// Builds the backends named in `config`.
    pub fn from_config(config: CampaignConfig, env: &HashMap<String, String>) -> Result<Self, CampaignError> {
        config.validate()?;
        let generator = config.surrogate.build()?;
        let planner = chat_backend(&config.llm, env)?;
        let critic = chat_backend(&config.llm, env)?;
        Self::with_backends(config, generator, planner, critic)
    }

    /// Uses the given backends; `None` selects the scripted agent.
    /// An existing `state.json` in the output directory is resumed.
    pub fn with_backends(
        config: CampaignConfig,
        generator: Box<dyn FlowGenerator>,
        planner: Option<Box<dyn ChatBackend>>,
        critic: Option<Box<dyn ChatBackend>>,
    ) -> Result<Self, CampaignError> {
        config.validate()?;
        let out_dir = config.out_dir.clone();
        fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
        let state_path = out_dir.join(STATE_FILE);
        let state = if state_path.exists() {
            let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
            let mut saved: CampaignState = serde_json::from_str(&text)
                .map_err(|e| CampaignError::State { path: state_path.clone(), reason: e.to_string() })?;
            if saved.status == RunStatus::Completed {
                return Err(CampaignError::AlreadyCompleted(out_dir));
            }
            if let Some(field) = resume_conflict(&saved.config, &config) {
                return Err(CampaignError::ConfigMismatch { path: state_path, field });
            }
            saved.config = config;
            saved.status = RunStatus::Running;
            saved.abort_reason = None;
            saved
        } else {
            CampaignState::fresh(config)
        };
        Ok(Self { state, generator, planner, critic, out_dir })
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn csv_path(&self) -> PathBuf {
        self.out_dir.join(CSV_FILE)
    }

    fn save_state(&self) -> Result<(), CampaignError> {
        let path = self.out_dir.join(STATE_FILE);
        let tmp = self.out_dir.join("state.json.tmp");
        let text = serde_json::to_string_pretty(&self.state).expect("state serializes") + "\n";
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(io_err(&path))
    }

    fn log(&self, events: &[Event]) -> Result<(), CampaignError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.out_dir.join(LOG_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut buf = String::new();
        for e in events {
            let line = json!({
                "timestamp": ts,
                "iteration": e.iteration,
                "node": e.node,
                "event": e.event,
                "detail": e.detail,
            });
            buf.push_str(&line.to_string());
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(io_err(&path))
    }

    fn abort(&mut self, reason: String) -> Result<(), CampaignError> {
        let it = self.state.iteration;
        self.state.status = RunStatus::Aborted;
        self.state.abort_reason = Some(reason.clone());
        self.log(&[Event::new(it, self.state.next, "aborted", json!({"reason": reason}))])?;
        self.save_state()
    }

    /// Runs nodes until the Writer finishes or a node aborts the campaign.
    pub fn run(&mut self) -> Result<CampaignOutcome, CampaignError> {
        let store = EvidenceStore::new(self.csv_path());
        self.save_state()?;
        loop {
            let mut events = Vec::new();
            let cfg = self.state.config.clone();
            let step: Result<(), CampaignError> = match self.state.next {
                Node::Planner => {
                    let rows = store.read()?;
                    let it = self.state.iteration + 1;
                    planner_step(&cfg, it, &rows, &self.state.failed, self.planner.as_mut().map(|b| b.as_mut() as &mut dyn ChatBackend), &mut events)
                        .map(|out| {
                            self.state.iteration = it;
                            self.state.pending = out.suggested_ds;
                            self.state.next = Node::Analyst;
                        })
                        .map_err(Into::into)
                }
                Node::Analyst => {
                    let it = self.state.iteration;
                    let pending = self.state.pending.clone();
                    analyst_step(&cfg, self.generator.as_ref(), &store, it, &pending, &self.state.failed, &mut events)
                        .map(|report| {
                            self.state.failed.extend(report.failed);
                            self.state.pending.clear();
                            self.state.next = Node::Critic;
                        })
                        .map_err(Into::into)
                }
                Node::Critic => {
                    let it = self.state.iteration;
                    critic_step(&cfg, it, &store, &self.state.failed, self.critic.as_mut().map(|b| b.as_mut() as &mut dyn ChatBackend), &mut events)
                        .map_err(CampaignError::from)
                        .and_then(|verdict| {
                            let n_rows = store.read()?.len();
                            let next = route(it, cfg.max_iterations, &verdict, n_rows);
                            self.state.last_verdict = Some(verdict);
                            match next {
                                Some(n) => {
                                    self.state.next = n;
                                    Ok(())
                                }
                                None => Err(CampaignError::NoEvidence(cfg.max_iterations)),
                            }
                        })
                }
                Node::Writer => {
                    let report = generate_report(store.path(), &self.out_dir, cfg.geometry_tolerance)?;
                    events.push(Event::new(
                        self.state.iteration,
                        Node::Writer,
                        "report",
                        json!({"markdown": report.markdown, "figures": report.figures}),
                    ));
                    self.state.next = Node::Done;
                    self.state.status = RunStatus::Completed;
                    self.log(&events)?;
                    self.save_state()?;
                    return Ok(CampaignOutcome {
                        iterations: self.state.iteration,
                        csv: store.path().to_path_buf(),
                        report,
                        verdict: self.state.last_verdict.clone(),
                    });
                }
                Node::Done => return Err(CampaignError::AlreadyCompleted(self.out_dir.clone())),
            };
            self.log(&events)?;
            if let Err(e) = step {
                self.abort(e.to_string())?;
                return Err(e);
            }
            self.save_state()?;
        }
    }
}
