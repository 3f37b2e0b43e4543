//! Blocking JSON-over-HTTP with bounded exponential backoff.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Largest response body accepted (frames can be several MB of base64).
const BODY_LIMIT: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_s: f64,
    pub factor: f64,
    pub timeout_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_s: 0.5, factor: 2.0, timeout_s: 30.0 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based count of failures so far).
    pub fn delay(&self, attempt: u32) -> Duration {
        let secs = self.base_delay_s * self.factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.max(0.0))
    }

    pub fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_s.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

/// What one HTTP exchange produced.
#[derive(Debug)]
pub enum Exchange {
    Response { status: u16, body: String },
    /// Connection, timeout or body-read failure.
    Transport(String),
}

pub fn post_json<T: Serialize + ?Sized>(agent: &ureq::Agent, url: &str, body: &T, bearer: Option<&str>) -> Exchange {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = bearer {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let payload = match serde_json::to_vec(body) {
        Ok(p) => p,
        Err(e) => return Exchange::Transport(format!("serialize request: {e}")),
    };
    match req.send(&payload[..]) {
        Ok(mut resp) => {
            let status = resp.status().as_u16();
            match resp.body_mut().with_config().limit(BODY_LIMIT).read_to_string() {
                Ok(body) => Exchange::Response { status, body },
                Err(e) => Exchange::Transport(format!("read body: {e}")),
            }
        }
        Err(e) => Exchange::Transport(e.to_string()),
    }
}

/// Runs `call` until it stops asking for a retry or attempts run out.
/// `call` returns `Err(Some(reason))` for retryable failures.
pub fn with_retries<T, E>(
    policy: &RetryPolicy,
    mut call: impl FnMut(u32) -> Result<T, Retry<E>>,
) -> Result<T, RetryOutcome<E>> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        match call(attempt) {
            Ok(v) => return Ok(v),
            Err(Retry::Fatal(e)) => return Err(RetryOutcome::Fatal(e)),
            Err(Retry::Again(reason)) => {
                last = reason;
                if attempt < attempts {
                    thread::sleep(policy.delay(attempt));
                }
            }
        }
    }
    Err(RetryOutcome::Exhausted { attempts, last })
}

pub enum Retry<E> {
    Again(String),
    Fatal(E),
}

pub enum RetryOutcome<E> {
    Fatal(E),
    Exhausted { attempts: u32, last: String },
}
