//! Spacing windows, coverage bookkeeping and the scripted planner rule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoverageError {
    #[error("window width must be positive, got {0}")]
    BadWidth(f64),
    #[error("empty range [{0}, {1}]")]
    EmptyRange(f64, f64),
}

/// Half-open `[lo, hi)` unless `closed`, in which case `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Window {
    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && (s < self.hi || (self.closed && s <= self.hi))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn label(&self) -> alloc::string::String {
        let close = if self.closed { ']' } else { ')' };
        alloc::format!("[{}, {}{}", trim(self.lo), trim(self.hi), close)
    }
}

fn trim(x: f64) -> alloc::string::String {
    // Window edges are at most a few decimals; print them compactly.
    let s = alloc::format!("{:.4}", x);
    let s = s.trim_end_matches('0');
    let s = s.strip_suffix('.').map(|p| alloc::format!("{p}.0")).unwrap_or_else(|| s.into());
    s
}

/// Uniform windows of `width` from `range.0`; the last window absorbs the
/// remainder and is closed at `range.1`.
pub fn partition_windows(range: (f64, f64), width: f64) -> Result<Vec<Window>, CoverageError> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(CoverageError::BadWidth(width));
    }
    let (lo, hi) = range;
    if !(hi > lo) {
        return Err(CoverageError::EmptyRange(lo, hi));
    }
    let n = libm::ceil((hi - lo) / width - 1e-9).max(1.0) as usize;
    Ok((0..n)
        .map(|k| {
            let a = lo + k as f64 * width;
            if k + 1 == n {
                Window { lo: a, hi, closed: true }
            } else {
                Window { lo: a, hi: lo + (k + 1) as f64 * width, closed: false }
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStatus {
    Covered,
    Gap,
    Exhausted,
}

/// One evaluated spacing: geometrically valid, or a failed attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingAttempt {
    pub spacing: f64,
    pub valid: bool,
}

/// Covered when a window holds a valid spacing; exhausted when it holds only
/// failed attempts and their count reached `retry_budget`; otherwise gap.
pub fn coverage_status(attempts: &[SpacingAttempt], windows: &[Window], retry_budget: usize) -> Vec<WindowStatus> {
    windows
        .iter()
        .map(|w| {
            let mut failed = 0;
            for a in attempts.iter().filter(|a| w.contains(a.spacing)) {
                if a.valid {
                    return WindowStatus::Covered;
                }
                failed += 1;
            }
            if failed >= retry_budget && failed > 0 {
                WindowStatus::Exhausted
            } else {
                WindowStatus::Gap
            }
        })
        .collect()
}

/// Suggested spacings are quantized to this step (D).
pub const SUGGESTION_QUANTUM: f64 = 0.01;

/// Scripted planner: one spacing per gap window, the midpoint plus seeded
/// jitter in ±0.25·width, quantized and kept inside the window.
pub fn scripted_suggestions(windows: &[Window], status: &[WindowStatus], seed: u64, iteration: u64) -> Vec<f64> {
    windows
        .iter()
        .zip(status)
        .enumerate()
        .filter(|(_, (_, s))| **s == WindowStatus::Gap)
        .map(|(k, (w, _))| {
            let mut r = rng::rng(rng::mix_seed(rng::mix_seed(seed, iteration), k as u64));
            let jitter = (2.0 * rng::uniform(&mut r) - 1.0) * 0.25 * w.width();
            let q = 1.0 / SUGGESTION_QUANTUM;
            let lo = libm::ceil(w.lo * q - 1e-9);
            let hi = if w.closed { libm::floor(w.hi * q + 1e-9) } else { libm::ceil(w.hi * q - 1e-9) - 1.0 };
            let pick = libm::round((w.midpoint() + jitter) * q).clamp(lo, hi);
            pick / q
        })
        .collect()
}
