//! Wake integral quantities, profile-matching errors, the composite objective
//! and probe sweeps.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{extract_profile, FieldError, GeometryEstimate, MeanField, VelocityProfile};

/// Freestream velocity used as the reference for both thicknesses.
pub const U_INF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("reference velocity must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("profile needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("profile y and u lengths differ ({y} vs {u})")]
    ShapeMismatch { y: usize, u: usize },
    #[error("reference profile has zero norm")]
    ZeroNormReference,
    #[error("non-finite input to the composite objective")]
    NonFinite,
    #[error("empty sweep range for spacing {spacing}")]
    EmptySweep { spacing: f64 },
    #[error("no probe results supplied")]
    NoResults,
    #[error("probe results mix spacings {0} and {1}")]
    MixedSpacings(f64, f64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("profile source failed at x_p = {x_p}: {reason}")]
    Source { x_p: f64, reason: alloc::string::String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub delta_star: f64,
    pub theta: f64,
    pub e_l2: f64,
    pub e_cos: f64,
    pub j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    DeltaStar,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Weights of the composite objective plus the metric that drives
/// refinement and termination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMode {
    pub w_delta: f64,
    pub w_theta: f64,
    pub w_l2: f64,
    pub w_cos: f64,
    pub primary: PrimaryMetric,
    pub direction: Direction,
}

impl MetricMode {
    /// Minimize displacement thickness: weights (1, 0, 0, 0).
    pub const fn delta_star() -> Self {
        Self { w_delta: 1.0, w_theta: 0.0, w_l2: 0.0, w_cos: 0.0, primary: PrimaryMetric::DeltaStar, direction: Direction::Minimize }
    }

    /// Maximize momentum thickness: weights (0, 1, 0, 0).
    pub const fn theta() -> Self {
        Self { w_delta: 0.0, w_theta: 1.0, w_l2: 0.0, w_cos: 0.0, primary: PrimaryMetric::Theta, direction: Direction::Maximize }
    }

    pub fn for_metric(metric: PrimaryMetric) -> Self {
        match metric {
            PrimaryMetric::DeltaStar => Self::delta_star(),
            PrimaryMetric::Theta => Self::theta(),
        }
    }

    pub fn primary_value(&self, m: &ProbeMetrics) -> f64 {
        match self.primary {
            PrimaryMetric::DeltaStar => m.delta_star,
            PrimaryMetric::Theta => m.theta,
        }
    }

    /// True when `a` is strictly better than `b` under this mode's direction.
    pub fn better(&self, a: f64, b: f64) -> bool {
        match self.direction {
            Direction::Minimize => a < b,
            Direction::Maximize => a > b,
        }
    }
}

/// Probe stations `x_start, x_start + step, …, ≤ S − x_end_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub x_start: f64,
    pub x_end_offset: f64,
    pub step: f64,
    pub ny_quadrature: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { x_start: 0.5, x_end_offset: 0.75, step: 0.15, ny_quadrature: 1024 }
    }
}

const STATION_SNAP: f64 = 1e9;

impl SweepSpec {
    pub fn x_end(&self, spacing: f64) -> f64 {
        spacing - self.x_end_offset
    }

    /// Number of stations for `spacing`; zero when the range is empty.
    pub fn station_count(&self, spacing: f64) -> usize {
        let span = self.x_end(spacing) - self.x_start;
        if !(self.step > 0.0) || !(span > 0.0) {
            return 0;
        }
        libm::floor(span / self.step + 1e-9) as usize + 1
    }

    /// Stations generated from integer multiples of the step, snapped to
    /// 1e−9 D so they print exactly as decimals.
    pub fn stations(&self, spacing: f64) -> Result<Vec<f64>, MetricError> {
        let n = self.station_count(spacing);
        if n == 0 {
            return Err(MetricError::EmptySweep { spacing });
        }
        Ok((0..n)
            .map(|i| libm::round((self.x_start + i as f64 * self.step) * STATION_SNAP) / STATION_SNAP)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub spacing: f64,
    pub x_p: f64,
    pub metrics: ProbeMetrics,
    pub geometry: GeometryEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumPoint {
    pub spacing: f64,
    pub x_star: f64,
    pub value: f64,
}

fn check_profile(profile: &VelocityProfile, u_ref: f64) -> Result<(), MetricError> {
    if !(u_ref > 0.0) {
        return Err(MetricError::NonPositiveReference(u_ref));
    }
    if profile.y.len() != profile.u.len() {
        return Err(MetricError::ShapeMismatch { y: profile.y.len(), u: profile.u.len() });
    }
    if profile.y.len() < 2 {
        return Err(MetricError::TooFewSamples(profile.y.len()));
    }
    Ok(())
}

fn trapezoid(y: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut prev = f(0);
    for k in 1..y.len() {
        let cur = f(k);
        acc += 0.5 * (y[k] - y[k - 1]) * (prev + cur);
        prev = cur;
    }
    acc
}

/// ∫ (1 − u/u_ref) dy over the profile's full y extent (trapezoidal rule).
pub fn displacement_thickness(profile: &VelocityProfile, u_ref: f64) -> Result<f64, MetricError> {
    check_profile(profile, u_ref)?;
    Ok(trapezoid(&profile.y, |k| 1.0 - profile.u[k] / u_ref))
}

/// ∫ (u/u_ref)(1 − u/u_ref) dy; negative where reversed flow dominates.
pub fn momentum_thickness(profile: &VelocityProfile, u_ref: f64) -> Result<f64, MetricError> {
    check_profile(profile, u_ref)?;
    Ok(trapezoid(&profile.y, |k| {
        let r = profile.u[k] / u_ref;
        r * (1.0 - r)
    }))
}

fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let t = (x - x0) / (x1 - x0);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

/// Relative L2 error and cosine distance of `profile` against `reference`.
///
/// The reference is resampled onto the profile's ordinates by linear
/// interpolation when the grids differ.
pub fn profile_errors(profile: &VelocityProfile, reference: &VelocityProfile) -> Result<(f64, f64), MetricError> {
    check_profile(profile, 1.0)?;
    check_profile(reference, 1.0)?;
    let resampled;
    let r: &[f64] = if profile.y == reference.y {
        &reference.u
    } else {
        resampled = profile
            .y
            .iter()
            .map(|&y| interp_clamped(&reference.y, &reference.u, y))
            .collect::<Vec<_>>();
        &resampled
    };
    let (mut diff2, mut rr, mut uu, mut ur) = (0.0, 0.0, 0.0, 0.0);
    for (u, r) in profile.u.iter().zip(r) {
        diff2 += (u - r) * (u - r);
        rr += r * r;
        uu += u * u;
        ur += u * r;
    }
    if rr == 0.0 {
        return Err(MetricError::ZeroNormReference);
    }
    let e_l2 = libm::sqrt(diff2) / libm::sqrt(rr);
    let e_cos = if uu == 0.0 {
        1.0
    } else {
        (1.0 - ur / (libm::sqrt(uu) * libm::sqrt(rr))).clamp(0.0, 2.0)
    };
    Ok((e_l2, e_cos))
}

/// J = w_δ·δ* + w_θ·θ + w_L2·E_L2 + w_cos·E_cos.
pub fn composite_objective(m: &ProbeMetrics, mode: &MetricMode) -> Result<f64, MetricError> {
    let terms = [
        (mode.w_delta, m.delta_star),
        (mode.w_theta, m.theta),
        (mode.w_l2, m.e_l2),
        (mode.w_cos, m.e_cos),
    ];
    let mut j = 0.0;
    for (w, x) in terms {
        if !w.is_finite() {
            return Err(MetricError::NonFinite);
        }
        if w != 0.0 {
            if !x.is_finite() {
                return Err(MetricError::NonFinite);
            }
            j += w * x;
        }
    }
    Ok(j)
}

/// Supplies velocity profiles at probe stations for one spacing.
pub trait ProfileSource {
    fn profile(&self, x_p: f64, n_samples: usize) -> Result<VelocityProfile, MetricError>;
}

impl ProfileSource for MeanField {
    fn profile(&self, x_p: f64, n_samples: usize) -> Result<VelocityProfile, MetricError> {
        Ok(extract_profile(self, x_p, Some(n_samples))?)
    }
}

/// Evaluate every station of the sweep: both thicknesses, profile errors
/// against `reference` (zero when absent) and the composite objective.
pub fn sweep_probes<P: ProfileSource + ?Sized>(
    source: &P,
    spacing: f64,
    spec: &SweepSpec,
    mode: &MetricMode,
    reference: Option<&VelocityProfile>,
    geometry: GeometryEstimate,
) -> Result<Vec<ProbeResult>, MetricError> {
    spec.stations(spacing)?
        .into_iter()
        .map(|x_p| {
            let profile = source.profile(x_p, spec.ny_quadrature)?;
            let delta_star = displacement_thickness(&profile, U_INF)?;
            let theta = momentum_thickness(&profile, U_INF)?;
            let (e_l2, e_cos) = match reference {
                Some(r) => profile_errors(&profile, r)?,
                None => (0.0, 0.0),
            };
            let mut metrics = ProbeMetrics { delta_star, theta, e_l2, e_cos, j: 0.0 };
            metrics.j = composite_objective(&metrics, mode)?;
            Ok(ProbeResult { spacing, x_p, metrics, geometry })
        })
        .collect()
}

/// Best station by the mode's primary metric; ties go to the smallest `x_p`.
pub fn find_extremum(results: &[ProbeResult], mode: &MetricMode) -> Result<OptimumPoint, MetricError> {
    let first = results.first().ok_or(MetricError::NoResults)?;
    if let Some(other) = results.iter().find(|r| r.spacing != first.spacing) {
        return Err(MetricError::MixedSpacings(first.spacing, other.spacing));
    }
    let points: Vec<(f64, f64)> = results.iter().map(|r| (r.x_p, mode.primary_value(&r.metrics))).collect();
    let (x_star, value) = best_point(&points, mode).ok_or(MetricError::NoResults)?;
    Ok(OptimumPoint { spacing: first.spacing, x_star, value })
}

/// Extremum over `(x, value)` pairs under `mode`, smallest `x` on ties.
pub fn best_point(points: &[(f64, f64)], mode: &MetricMode) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &(x, v) in points {
        best = match best {
            None => Some((x, v)),
            Some((bx, bv)) => {
                if mode.better(v, bv) || (v == bv && x < bx) {
                    Some((x, v))
                } else {
                    Some((bx, bv))
                }
            }
        };
    }
    best
}
