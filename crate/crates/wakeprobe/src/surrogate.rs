//! The flow-generator tool: analytic, replay and remote backends behind one
//! trait, plus a fault-injecting wrapper for exercising the safeguards.

use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wakeprobe_core::field::{FlowSnapshot, Grid};
use wakeprobe_core::metrics::ProfileSource;
use wakeprobe_core::surrogate::{
    corrupt_geometry, AnalyticModel, AnalyticModelParams, FrameSpec, SurrogateError, SPACING_MAX, SPACING_MIN,
};

use crate::http::RetryPolicy;
use crate::remote::{RemoteError, RemoteSurrogate};
use crate::replay::{ReplayError, ReplayLibrary};

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    /// The request itself was bad; retrying the same spacing cannot help.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The backend is down; the campaign should stop and be resumed later.
    #[error("surrogate unavailable: {0}")]
    Unavailable(String),
    #[error("decode failure: {0}")]
    Decode(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl From<SurrogateError> for GenerateError {
    fn from(e: SurrogateError) -> Self {
        GenerateError::InvalidParameter(e.to_string())
    }
}

impl From<RemoteError> for GenerateError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::InvalidParameter { .. } => GenerateError::InvalidParameter(e.to_string()),
            RemoteError::Unavailable { .. } => GenerateError::Unavailable(e.to_string()),
            RemoteError::Decode(_) => GenerateError::Decode(e.to_string()),
        }
    }
}

impl From<ReplayError> for GenerateError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::Io { .. } => GenerateError::Unavailable(e.to_string()),
            ReplayError::Format { .. } => GenerateError::Decode(e.to_string()),
            ReplayError::NoArchive { .. } => GenerateError::InvalidParameter(e.to_string()),
        }
    }
}

pub trait FlowGenerator: Send + Sync {
    fn generate(&self, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError>;

    /// A closed-form profile source for `spacing`, when the backend has one.
    /// Sweeps fall back to the time-averaged field otherwise.
    fn profile_source(&self, _spacing: f64) -> Option<Box<dyn ProfileSource + '_>> {
        None
    }

    fn spacing_range(&self) -> (f64, f64) {
        (SPACING_MIN, SPACING_MAX)
    }
}

fn check_range(spacing: f64, range: (f64, f64)) -> Result<(), GenerateError> {
    if spacing >= range.0 && spacing <= range.1 {
        Ok(())
    } else {
        Err(GenerateError::InvalidParameter(format!("spacing {spacing} outside [{}, {}]", range.0, range.1)))
    }
}

#[derive(Debug, Clone)]
pub struct AnalyticGenerator {
    pub model: AnalyticModel,
    pub frames: FrameSpec,
}

impl AnalyticGenerator {
    pub fn new(params: AnalyticModelParams, frames: FrameSpec) -> Result<Self, GenerateError> {
        Ok(Self { model: AnalyticModel::new(params)?, frames })
    }
}

impl Default for AnalyticGenerator {
    fn default() -> Self {
        Self::new(AnalyticModelParams::default(), FrameSpec::default()).expect("default analytic model is valid")
    }
}

impl FlowGenerator for AnalyticGenerator {
    fn generate(&self, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError> {
        Ok(self.model.generate(&self.frames, spacing, n_frames, seed)?)
    }

    fn profile_source(&self, spacing: f64) -> Option<Box<dyn ProfileSource + '_>> {
        let g = self.frames.grid;
        Some(Box::new(self.model.at_spacing(spacing, (g.y0, g.y_max()))))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayGenerator {
    library: ReplayLibrary,
    range: (f64, f64),
}

impl ReplayGenerator {
    pub fn new(root: impl Into<PathBuf>, range: (f64, f64)) -> Self {
        Self { library: ReplayLibrary::new(root), range }
    }
}

impl FlowGenerator for ReplayGenerator {
    fn generate(&self, spacing: f64, n_frames: usize, _seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError> {
        check_range(spacing, self.range)?;
        let archive = self.library.find(spacing)?;
        if archive.snapshots.len() < n_frames || n_frames == 0 {
            return Err(GenerateError::InvalidParameter(format!(
                "archive holds {} frames, requested {n_frames}",
                archive.snapshots.len()
            )));
        }
        Ok(archive.snapshots.into_iter().take(n_frames).collect())
    }

    fn spacing_range(&self) -> (f64, f64) {
        self.range
    }
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: RemoteSurrogate,
    range: (f64, f64),
}

impl RemoteGenerator {
    pub fn new(endpoint: impl Into<String>, policy: RetryPolicy, range: (f64, f64)) -> Self {
        Self { client: RemoteSurrogate::new(endpoint, policy), range }
    }
}

impl FlowGenerator for RemoteGenerator {
    fn generate(&self, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError> {
        check_range(spacing, self.range)?;
        Ok(self.client.generate(spacing, n_frames, seed)?)
    }

    fn spacing_range(&self) -> (f64, f64) {
        self.range
    }
}

/// Shifts the downstream cylinder of every frame for the first `count`
/// calls whose spacing falls in `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptSpec {
    pub lo: f64,
    pub hi: f64,
    pub shift: f64,
    pub count: usize,
}

pub struct CorruptingSurrogate<G> {
    inner: G,
    spec: CorruptSpec,
    remaining: Mutex<usize>,
}

impl<G: FlowGenerator> CorruptingSurrogate<G> {
    pub fn new(inner: G, spec: CorruptSpec) -> Self {
        Self { inner, remaining: Mutex::new(spec.count), spec }
    }
}

impl<G: FlowGenerator> FlowGenerator for CorruptingSurrogate<G> {
    fn generate(&self, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError> {
        let frames = self.inner.generate(spacing, n_frames, seed)?;
        let hit = spacing >= self.spec.lo && spacing < self.spec.hi;
        let mut remaining = self.remaining.lock().expect("counter poisoned");
        if !hit || *remaining == 0 {
            return Ok(frames);
        }
        *remaining -= 1;
        frames.iter().map(|f| Ok(corrupt_geometry(f, self.spec.shift)?)).collect()
    }

    fn profile_source(&self, spacing: f64) -> Option<Box<dyn ProfileSource + '_>> {
        self.inner.profile_source(spacing)
    }

    fn spacing_range(&self) -> (f64, f64) {
        self.inner.spacing_range()
    }
}

impl FlowGenerator for Box<dyn FlowGenerator> {
    fn generate(&self, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError> {
        (**self).generate(spacing, n_frames, seed)
    }
    fn profile_source(&self, spacing: f64) -> Option<Box<dyn ProfileSource + '_>> {
        (**self).profile_source(spacing)
    }
    fn spacing_range(&self) -> (f64, f64) {
        (**self).spacing_range()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Analytic,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    pub backend: Backend,
    pub spacing_range: (f64, f64),
    pub grid: Grid,
    pub frames_per_period: usize,
    pub fluctuation_eps: f64,
    pub remote_endpoint: Option<String>,
    pub replay_path: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub analytic: AnalyticModelParams,
    /// Fault injection for safeguard drills; off by default.
    pub corrupt: Option<CorruptSpec>,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        let frames = FrameSpec::default();
        Self {
            backend: Backend::Analytic,
            spacing_range: (SPACING_MIN, SPACING_MAX),
            grid: frames.grid,
            frames_per_period: frames.frames_per_period,
            fluctuation_eps: frames.fluctuation_eps,
            remote_endpoint: None,
            replay_path: None,
            retry: RetryPolicy::default(),
            analytic: AnalyticModelParams::default(),
            corrupt: None,
        }
    }
}

impl SurrogateSpec {
    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec { grid: self.grid, frames_per_period: self.frames_per_period, fluctuation_eps: self.fluctuation_eps }
    }

    pub fn build(&self) -> Result<Box<dyn FlowGenerator>, GenerateError> {
        if self.frames_per_period < 2 {
            return Err(GenerateError::Config("frames_per_period must be at least 2".into()));
        }
        let base: Box<dyn FlowGenerator> = match self.backend {
            Backend::Analytic => Box::new(AnalyticGenerator::new(self.analytic, self.frame_spec())?),
            Backend::Replay => {
                let path = self
                    .replay_path
                    .clone()
                    .ok_or_else(|| GenerateError::Config("replay backend needs replay_path".into()))?;
                Box::new(ReplayGenerator::new(path, self.spacing_range))
            }
            Backend::Remote => {
                let url = self
                    .remote_endpoint
                    .clone()
                    .ok_or_else(|| GenerateError::Config("remote backend needs remote_endpoint".into()))?;
                Box::new(RemoteGenerator::new(url, self.retry, self.spacing_range))
            }
        };
        Ok(match self.corrupt {
            Some(c) => Box::new(CorruptingSurrogate::new(base, c)),
            None => base,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wakeprobe_core::field::detect_cylinder_centers;

    #[test]
    fn corruption_hits_only_the_first_calls_in_range() {
        let spec = CorruptSpec { lo: 5.5, hi: 6.5, shift: 0.6, count: 1 };
        let g = CorruptingSurrogate::new(AnalyticGenerator::default(), spec);
        let check = |s: f64| {
            let f = g.generate(s, 1, 0).unwrap();
            detect_cylinder_centers(&f[0], [(0.0, 0.0), (s, 0.0)], 0.25).valid
        };
        assert!(check(5.0));
        assert!(!check(6.0));
        assert!(check(6.0));
    }

    #[test]
    fn spec_requires_backend_inputs() {
        let spec = SurrogateSpec { backend: Backend::Remote, ..SurrogateSpec::default() };
        assert!(matches!(spec.build(), Err(GenerateError::Config(_))));
        let spec = SurrogateSpec { backend: Backend::Replay, ..SurrogateSpec::default() };
        assert!(matches!(spec.build(), Err(GenerateError::Config(_))));
        assert!(SurrogateSpec::default().build().unwrap().profile_source(5.0).is_some());
    }

    #[test]
    fn out_of_range_is_invalid_parameter() {
        let g = AnalyticGenerator::default();
        assert!(matches!(g.generate(12.0, 1, 0), Err(GenerateError::InvalidParameter(_))));
    }
}
