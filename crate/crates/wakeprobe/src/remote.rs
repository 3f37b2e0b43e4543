//! HTTP client for a remote flow generator.
//!
//! Wire contract: `POST {endpoint}/v1/generate` with
//! `{"spacing", "n_frames", "seed"}`; the reply carries the grid and one
//! `{u, v, p}` triple per frame, each base64 of little-endian `f32`.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wakeprobe_core::field::{FlowSnapshot, Grid};

use crate::http::{post_json, with_retries, Exchange, Retry, RetryOutcome, RetryPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum RemoteError {
    #[error("surrogate rejected the request (HTTP {status}): {body}")]
    InvalidParameter { status: u16, body: String },
    #[error("surrogate unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("cannot decode surrogate reply: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub spacing: f64,
    pub n_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub u: String,
    pub v: String,
    pub p: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub frames: Vec<WireFrame>,
}

pub fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_f32(text: &str, expected: usize, what: &str) -> Result<Vec<f64>, RemoteError> {
    let bytes = B64.decode(text).map_err(|e| RemoteError::Decode(format!("{what}: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(RemoteError::Decode(format!("{what}: {} bytes, expected {}", bytes.len(), expected * 4)));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RemoteError::Decode(format!("{what}: non-finite value")));
    }
    Ok(values)
}

impl GenerateResponse {
    pub fn from_snapshots(grid: &Grid, snapshots: &[FlowSnapshot]) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            x0: grid.x0,
            y0: grid.y0,
            dx: grid.dx,
            dy: grid.dy,
            frames: snapshots
                .iter()
                .map(|s| WireFrame { u: encode_f32(&s.u), v: encode_f32(&s.v), p: encode_f32(&s.p) })
                .collect(),
        }
    }

    pub fn into_snapshots(self, spacing: f64, n_frames: usize) -> Result<Vec<FlowSnapshot>, RemoteError> {
        let grid = Grid::new(self.nx, self.ny, self.x0, self.y0, self.dx, self.dy)
            .map_err(|e| RemoteError::Decode(format!("grid: {e}")))?;
        if self.frames.len() != n_frames {
            return Err(RemoteError::Decode(format!("{} frames, requested {n_frames}", self.frames.len())));
        }
        let n = grid.len();
        self.frames
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let u = decode_f32(&f.u, n, &format!("frame {j} u"))?;
                let v = decode_f32(&f.v, n, &format!("frame {j} v"))?;
                let p = decode_f32(&f.p, n, &format!("frame {j} p"))?;
                FlowSnapshot::new(grid, u, v, p, spacing, j as u64).map_err(|e| RemoteError::Decode(e.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteSurrogate {
    endpoint: String,
    policy: RetryPolicy,
    agent: ureq::Agent,
}

impl RemoteSurrogate {
    pub fn new(endpoint: impl Into<String>, policy: RetryPolicy) -> Self {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        Self { agent: policy.agent(), endpoint, policy }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn generate(&self, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, RemoteError> {
        let url = format!("{}/v1/generate", self.endpoint);
        let req = GenerateRequest { spacing, n_frames, seed };
        let body = with_retries(&self.policy, |_| match post_json(&self.agent, &url, &req, None) {
            Exchange::Response { status, body } if (200..300).contains(&status) => Ok(body),
            Exchange::Response { status, body } if (400..500).contains(&status) => {
                Err(Retry::Fatal(RemoteError::InvalidParameter { status, body }))
            }
            Exchange::Response { status, .. } => Err(Retry::Again(format!("HTTP {status}"))),
            Exchange::Transport(reason) => Err(Retry::Again(reason)),
        })
        .map_err(|e| match e {
            RetryOutcome::Fatal(e) => e,
            RetryOutcome::Exhausted { attempts, last } => RemoteError::Unavailable { attempts, reason: last },
        })?;
        let resp: GenerateResponse = serde_json::from_str(&body).map_err(|e| RemoteError::Decode(e.to_string()))?;
        resp.into_snapshots(spacing, n_frames)
    }
}
