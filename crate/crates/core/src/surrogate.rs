//! Closed-form tandem-wake model and the `FLOWSNP1` snapshot codec.
//!
//! The analytic model prescribes target thicknesses `(δ*_t, θ_t)` over
//! `(S, x_p)` and builds Gaussian-deficit profiles `u = 1 − A·exp(−y²/2s²)`
//! whose integrals reproduce those targets exactly:
//!
//! ```text
//! δ* = A s √(2π)          θ = δ* − A² s √π
//! ⇒ A = √2 (1 − θ/δ*),    s = δ* / (A √(2π))
//! ```
//!
//! Two evaluation paths exist. Metrics use [`AnalyticModel::profile`] at the
//! sweep's quadrature resolution ("profile path") because near-wake deficits
//! are narrower than a grid cell. Rasterized frames from
//! [`AnalyticModel::generate`] ("field path") feed geometry detection,
//! time averaging and Reynolds-stress statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FlowSnapshot, Grid, VelocityProfile};
use crate::metrics::{MetricError, ProfileSource};

pub const SPACING_MIN: f64 = 3.5;
pub const SPACING_MAX: f64 = 10.0;
pub const CYLINDER_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("spacing {0} outside [{SPACING_MIN}, {SPACING_MAX}]")]
    SpacingOutOfRange(f64),
    #[error("station x_p = {x_p} outside [{lo}, {hi}] for spacing {spacing}")]
    StationOutOfRange { spacing: f64, x_p: f64, lo: f64, hi: f64 },
    #[error("infeasible targets: θ_t = {theta} must be below δ*_t = {delta} and δ*_t > 0")]
    InfeasibleTargets { delta: f64, theta: f64 },
    #[error("analytic model violates its envelope at S = {spacing}, x_p = {x_p}: {what}")]
    Envelope { spacing: f64, x_p: f64, what: &'static str },
    #[error("n_frames must be at least 1")]
    NoFrames,
    #[error("frames_per_period must be at least 2")]
    BadPeriod,
    #[error("shifted cylinder would leave the grid (center x = {0})")]
    ShiftOffGrid(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Constants of the synthetic landscape (D / U∞ units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticModelParams {
    pub b0: f64,
    pub b1: f64,
    pub dip_depth: f64,
    pub dip_center_slope: f64,
    pub dip_center_intercept: f64,
    pub dip_width: f64,
    pub switch_center: f64,
    pub switch_steepness: f64,
    pub theta_peak: f64,
    pub theta_width: f64,
    pub theta_peak_offset: f64,
    pub recirc_amplitude: f64,
    pub recirc_decay: f64,
    pub bump_amplitude: f64,
    pub bump_center: f64,
    pub bump_width: f64,
}

impl Default for AnalyticModelParams {
    fn default() -> Self {
        Self {
            b0: 0.40,
            b1: 0.08,
            dip_depth: 0.5,
            dip_center_slope: 0.71,
            dip_center_intercept: -2.2,
            dip_width: 0.8,
            switch_center: 7.0,
            switch_steepness: 4.0,
            theta_peak: 0.35,
            theta_width: 1.0,
            theta_peak_offset: 1.2,
            recirc_amplitude: 0.5,
            recirc_decay: 0.35,
            bump_amplitude: 0.08,
            bump_center: 1.8,
            bump_width: 0.4,
        }
    }
}

/// Rasterization and time-fluctuation settings for synthetic frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub grid: Grid,
    pub frames_per_period: usize,
    pub fluctuation_eps: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self { grid: Grid::tandem_default(), frames_per_period: 16, fluctuation_eps: 0.05 }
    }
}

/// Validated analytic tandem-wake model.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    params: AnalyticModelParams,
    x_start: f64,
    x_end_offset: f64,
}

const RANGE_SLACK: f64 = 1e-9;

impl AnalyticModel {
    /// Builds the model and checks `0.05 < δ*_t` and `θ_t < δ*_t` on a
    /// 0.05-resolution grid over the whole swept domain.
    pub fn new(params: AnalyticModelParams) -> Result<Self, SurrogateError> {
        let model = Self { params, x_start: 0.5, x_end_offset: 0.75 };
        let n_s = libm::round((SPACING_MAX - SPACING_MIN) / 0.05) as usize;
        for a in 0..=n_s {
            let s = SPACING_MIN + a as f64 * 0.05;
            let n_x = libm::floor((s - model.x_end_offset - model.x_start) / 0.05 + 1e-9) as usize;
            for b in 0..=n_x {
                let x = model.x_start + b as f64 * 0.05;
                let (d, t) = model.targets_unchecked(s, x);
                if !(d > 0.05) {
                    return Err(SurrogateError::Envelope { spacing: s, x_p: x, what: "δ*_t ≤ 0.05" });
                }
                if !(t < d) {
                    return Err(SurrogateError::Envelope { spacing: s, x_p: x, what: "θ_t ≥ δ*_t" });
                }
            }
        }
        Ok(model)
    }

    pub fn params(&self) -> &AnalyticModelParams {
        &self.params
    }

    /// Logistic regime switch B(S).
    pub fn dip_amplitude(&self, spacing: f64) -> f64 {
        let p = &self.params;
        p.dip_depth / (1.0 + libm::exp(-p.switch_steepness * (spacing - p.switch_center)))
    }

    pub fn dip_center(&self, spacing: f64) -> f64 {
        self.params.dip_center_slope * spacing + self.params.dip_center_intercept
    }

    fn targets_unchecked(&self, spacing: f64, x_p: f64) -> (f64, f64) {
        let p = &self.params;
        let dip = self.dip_amplitude(spacing)
            * gauss(x_p - self.dip_center(spacing), p.dip_width);
        let delta = p.b0 + p.b1 * (x_p - self.x_start) - dip;
        let peak = p.theta_peak * gauss(x_p - (spacing - p.theta_peak_offset), p.theta_width);
        let recirc = p.recirc_amplitude * libm::exp(-(x_p - self.x_start) / p.recirc_decay);
        let bump = p.bump_amplitude * gauss(x_p - p.bump_center, p.bump_width);
        (delta, peak - recirc + bump)
    }

    pub fn check_spacing(&self, spacing: f64) -> Result<(), SurrogateError> {
        if spacing >= SPACING_MIN - RANGE_SLACK && spacing <= SPACING_MAX + RANGE_SLACK {
            Ok(())
        } else {
            Err(SurrogateError::SpacingOutOfRange(spacing))
        }
    }

    /// Target `(δ*_t, θ_t)` at station `x_p` for spacing `S`.
    pub fn targets(&self, spacing: f64, x_p: f64) -> Result<(f64, f64), SurrogateError> {
        self.check_spacing(spacing)?;
        let (lo, hi) = (self.x_start, spacing - self.x_end_offset);
        if !(x_p >= lo - RANGE_SLACK && x_p <= hi + RANGE_SLACK) {
            return Err(SurrogateError::StationOutOfRange { spacing, x_p, lo, hi });
        }
        Ok(self.targets_unchecked(spacing, x_p))
    }

    /// Gaussian-deficit profile whose thickness integrals equal the targets.
    pub fn profile(&self, spacing: f64, x_p: f64, y: &[f64]) -> Result<VelocityProfile, SurrogateError> {
        let (d, t) = self.targets(spacing, x_p)?;
        let (amp, width) = deficit_shape(d, t)?;
        Ok(VelocityProfile { y: y.to_vec(), u: y.iter().map(|&y| 1.0 - amp * gauss(y, width)).collect(), x_p })
    }

    /// `ProfileSource` for one spacing, sampling `y ∈ [y_lo, y_hi]`.
    pub fn at_spacing(&self, spacing: f64, y_range: (f64, f64)) -> AnalyticSpacing<'_> {
        AnalyticSpacing { model: self, spacing, y_range }
    }

    /// Time-mean streamwise velocity ū with both cylinders imprinted as
    /// zero-velocity disks.
    pub fn rasterize_mean(&self, spacing: f64, grid: &Grid) -> Result<Vec<f64>, SurrogateError> {
        self.check_spacing(spacing)?;
        let (lo, hi) = (self.x_start, spacing - self.x_end_offset);
        let mut u = vec![1.0; grid.len()];
        for i in 0..grid.nx {
            let x = grid.x(i);
            if x < 0.0 {
                continue;
            }
            let (d, t) = self.targets_unchecked(spacing, x.clamp(lo, hi));
            let (amp, width) = deficit_shape(d, t)?;
            for j in 0..grid.ny {
                u[grid.index(i, j)] = 1.0 - amp * gauss(grid.y(j), width);
            }
        }
        for center in [(0.0, 0.0), (spacing, 0.0)] {
            for k in disk_cells(grid, center) {
                u[k] = 0.0;
            }
        }
        Ok(u)
    }

    /// `n_frames` snapshots `u = ū·(1 + ε·sin(2πj/F + 2πx/8))`, `v ≡ 0`,
    /// `p ≡ 0`. The seed selects the starting phase index.
    pub fn generate(&self, frames: &FrameSpec, spacing: f64, n_frames: usize, seed: u64) -> Result<Vec<FlowSnapshot>, SurrogateError> {
        if n_frames == 0 {
            return Err(SurrogateError::NoFrames);
        }
        if frames.frames_per_period < 2 {
            return Err(SurrogateError::BadPeriod);
        }
        let grid = frames.grid;
        grid.validate()?;
        let mean = self.rasterize_mean(spacing, &grid)?;
        let period = frames.frames_per_period;
        let offset = (seed % period as u64) as usize;
        let phase_x: Vec<f64> = (0..grid.nx).map(|i| 2.0 * PI * grid.x(i) / 8.0).collect();
        let n = grid.len();
        Ok((0..n_frames)
            .map(|j| {
                let phase_t = 2.0 * PI * ((j + offset) % period) as f64 / period as f64;
                let u = mean
                    .iter()
                    .enumerate()
                    .map(|(k, &m)| m * (1.0 + frames.fluctuation_eps * libm::sin(phase_t + phase_x[k % grid.nx])))
                    .collect();
                FlowSnapshot { grid, u, v: vec![0.0; n], p: vec![0.0; n], spacing, time_index: j as u64 }
            })
            .collect())
    }
}

/// One spacing of the analytic model viewed as a profile source.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticSpacing<'a> {
    model: &'a AnalyticModel,
    spacing: f64,
    y_range: (f64, f64),
}

impl ProfileSource for AnalyticSpacing<'_> {
    fn profile(&self, x_p: f64, n_samples: usize) -> Result<VelocityProfile, MetricError> {
        let n = n_samples.max(2);
        let (lo, hi) = self.y_range;
        let y: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        self.model
            .profile(self.spacing, x_p, &y)
            .map_err(|e| MetricError::Source { x_p, reason: alloc::format!("{e}") })
    }
}

#[inline]
fn gauss(x: f64, width: f64) -> f64 {
    libm::exp(-(x * x) / (2.0 * width * width))
}

/// Amplitude and width of the Gaussian deficit realizing `(δ*, θ)`.
pub fn deficit_shape(delta: f64, theta: f64) -> Result<(f64, f64), SurrogateError> {
    if !(delta > 0.0) || !(theta < delta) {
        return Err(SurrogateError::InfeasibleTargets { delta, theta });
    }
    let amp = SQRT_2 * (1.0 - theta / delta);
    let width = delta / (amp * libm::sqrt(2.0 * PI));
    Ok((amp, width))
}

fn disk_cells(grid: &Grid, center: (f64, f64)) -> Vec<usize> {
    let r2 = CYLINDER_RADIUS * CYLINDER_RADIUS;
    let mut cells = Vec::new();
    for j in 0..grid.ny {
        let dy = grid.y(j) - center.1;
        for i in 0..grid.nx {
            let dx = grid.x(i) - center.0;
            if dx * dx + dy * dy <= r2 {
                cells.push(grid.index(i, j));
            }
        }
    }
    cells
}

/// Moves the downstream cylinder of `snapshot` by `dx_shift`.
///
/// Vacated cells take the freestream value (u = 1, v = 0); every other cell
/// is left untouched.
pub fn corrupt_geometry(snapshot: &FlowSnapshot, dx_shift: f64) -> Result<FlowSnapshot, SurrogateError> {
    if dx_shift == 0.0 {
        return Ok(snapshot.clone());
    }
    let g = snapshot.grid;
    let target = snapshot.spacing + dx_shift;
    if target - CYLINDER_RADIUS < g.x0 || target + CYLINDER_RADIUS > g.x_max() {
        return Err(SurrogateError::ShiftOffGrid(target));
    }
    let mut out = snapshot.clone();
    for k in disk_cells(&g, (snapshot.spacing, 0.0)) {
        out.u[k] = 1.0;
        out.v[k] = 0.0;
    }
    for k in disk_cells(&g, (target, 0.0)) {
        out.u[k] = 0.0;
        out.v[k] = 0.0;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// FLOWSNP1 codec

pub const ARCHIVE_MAGIC: &[u8; 8] = b"FLOWSNP1";
pub const ARCHIVE_VERSION: u32 = 1;
const N_FIELDS: u32 = 3;
const HEADER_LEN: usize = 8 + 5 * 4 + 6 * 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchiveError {
    #[error("bad magic {0:?}, expected \"FLOWSNP1\"")]
    BadMagic([u8; 8]),
    #[error("unsupported version {0}, expected {ARCHIVE_VERSION}")]
    Version(u32),
    #[error("unsupported field count {0}, expected {N_FIELDS}")]
    FieldCount(u32),
    #[error("truncated {field}: need {needed} bytes, have {available}")]
    Truncated { field: String, needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("header grid invalid: {0}")]
    Grid(FieldError),
    #[error("snapshot {index} does not match the archive header")]
    Inconsistent { index: usize },
    #[error("size overflow computing payload length")]
    Overflow,
}

/// Time-ordered snapshots of one spacing, as stored in `FLOWSNP1` files.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotArchive {
    pub grid: Grid,
    pub spacing: f64,
    pub dt: f64,
    pub snapshots: Vec<FlowSnapshot>,
}

impl SnapshotArchive {
    pub fn encode(&self) -> Result<Vec<u8>, ArchiveError> {
        let n = self.grid.len();
        for (index, s) in self.snapshots.iter().enumerate() {
            if s.grid != self.grid || s.u.len() != n || s.v.len() != n || s.p.len() != n {
                return Err(ArchiveError::Inconsistent { index });
            }
        }
        let to_u32 = |v: usize| u32::try_from(v).map_err(|_| ArchiveError::Overflow);
        let mut out = Vec::with_capacity(HEADER_LEN + self.snapshots.len() * 3 * n * 4);
        out.extend_from_slice(ARCHIVE_MAGIC);
        for v in [ARCHIVE_VERSION, to_u32(self.grid.nx)?, to_u32(self.grid.ny)?, to_u32(self.snapshots.len())?, N_FIELDS] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.spacing, self.dt, self.grid.x0, self.grid.y0, self.grid.dx, self.grid.dy] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.snapshots {
            for field in [&s.u, &s.v, &s.p] {
                for &x in field.iter() {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 8] = r.take("magic", 8)?.try_into().expect("8 bytes");
        if &magic != ARCHIVE_MAGIC {
            return Err(ArchiveError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != ARCHIVE_VERSION {
            return Err(ArchiveError::Version(version));
        }
        let nx = r.u32("nx")? as usize;
        let ny = r.u32("ny")? as usize;
        let n_snapshots = r.u32("n_snapshots")? as usize;
        let n_fields = r.u32("n_fields")?;
        if n_fields != N_FIELDS {
            return Err(ArchiveError::FieldCount(n_fields));
        }
        let spacing = r.f64("spacing")?;
        let dt = r.f64("dt")?;
        let x0 = r.f64("x0")?;
        let y0 = r.f64("y0")?;
        let dx = r.f64("dx")?;
        let dy = r.f64("dy")?;
        let grid = Grid::new(nx, ny, x0, y0, dx, dy).map_err(ArchiveError::Grid)?;
        let n = grid.len();
        let payload = n
            .checked_mul(4 * N_FIELDS as usize)
            .and_then(|b| b.checked_mul(n_snapshots))
            .ok_or(ArchiveError::Overflow)?;
        let available = bytes.len() - r.pos;
        if available < payload {
            return Err(ArchiveError::Truncated {
                field: alloc::format!("payload ({n_snapshots} snapshots)"),
                needed: payload,
                available,
            });
        }
        if available > payload {
            return Err(ArchiveError::TrailingBytes(available - payload));
        }
        let mut snapshots = Vec::with_capacity(n_snapshots);
        for index in 0..n_snapshots {
            let mut fields = [Vec::new(), Vec::new(), Vec::new()];
            for (f, name) in fields.iter_mut().zip(["u", "v", "p"]) {
                let raw = r.take(name, 4 * n)?;
                *f = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
            }
            let [u, v, p] = fields;
            snapshots.push(FlowSnapshot { grid, u, v, p, spacing, time_index: index as u64 });
        }
        Ok(Self { grid, spacing, dt, snapshots })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, field: &str, len: usize) -> Result<&'a [u8], ArchiveError> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(ArchiveError::Truncated { field: String::from(field), needed: len, available });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, field: &str) -> Result<f64, ArchiveError> {
        Ok(f64::from_le_bytes(self.take(field, 8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{detect_cylinder_centers, mean_with_stress, time_average};
    use crate::metrics::{displacement_thickness, momentum_thickness};

    fn model() -> AnalyticModel {
        AnalyticModel::new(AnalyticModelParams::default()).unwrap()
    }

    #[test]
    fn target_spot_values() {
        let m = model();
        let (d, t) = m.targets(5.0, 0.5).unwrap();
        // B(5) = 0.5 / (1 + e⁸); dip term ≈ 1e−4
        assert!((d - 0.3999).abs() < 1e-4, "{d}");
        let expected_t = -0.5 + 0.35 * (-5.445f64).exp() + 0.08 * (-1.69f64 / 0.32).exp();
        assert!((t - expected_t).abs() < 1e-12, "{t} vs {expected_t}");
        assert!((t + 0.498).abs() < 5e-4);
        let (_, t) = m.targets(5.0, 3.8).unwrap();
        assert!((t - 0.350).abs() < 1e-3);
    }

    #[test]
    fn target_range_errors() {
        let m = model();
        assert!(matches!(m.targets(3.0, 1.0), Err(SurrogateError::SpacingOutOfRange(_))));
        assert!(matches!(m.targets(5.0, 4.5), Err(SurrogateError::StationOutOfRange { .. })));
        assert!(matches!(m.targets(5.0, 0.4), Err(SurrogateError::StationOutOfRange { .. })));
    }

    #[test]
    fn profile_round_trip_recovers_targets() {
        let m = model();
        let y: Vec<f64> = (0..4097).map(|k| -4.0 + 8.0 * k as f64 / 4096.0).collect();
        for (s, x) in [(5.0, 0.5), (5.0, 2.0), (9.0, 4.2), (3.5, 2.75), (7.2, 1.1)] {
            let p = m.profile(s, x, &y).unwrap();
            let (d, t) = m.targets(s, x).unwrap();
            assert!((displacement_thickness(&p, 1.0).unwrap() - d).abs() < 1e-4);
            assert!((momentum_thickness(&p, 1.0).unwrap() - t).abs() < 1e-4);
        }
    }

    #[test]
    fn deficit_shape_rules() {
        let (a, _) = deficit_shape(0.4, 0.0).unwrap();
        assert_eq!(a, SQRT_2);
        assert!(matches!(deficit_shape(0.4, 0.4), Err(SurrogateError::InfeasibleTargets { .. })));
        assert!(matches!(deficit_shape(0.0, -1.0), Err(SurrogateError::InfeasibleTargets { .. })));
    }

    #[test]
    fn infeasible_params_rejected() {
        let params = AnalyticModelParams { theta_peak: 2.0, ..Default::default() };
        assert!(matches!(AnalyticModel::new(params), Err(SurrogateError::Envelope { .. })));
    }

    #[test]
    fn full_period_mean_is_exact() {
        let m = model();
        let spec = FrameSpec::default();
        let frames = m.generate(&spec, 5.0, spec.frames_per_period, 3).unwrap();
        let mean = mean_with_stress(&frames).unwrap();
        let exact = m.rasterize_mean(5.0, &spec.grid).unwrap();
        let worst = mean.u_mean.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
        // R_uu = ε² ū² / 2
        let eps = spec.fluctuation_eps;
        let r = mean.r_uu.unwrap();
        let worst = r
            .iter()
            .zip(&exact)
            .map(|(r, u)| (r - eps * eps * u * u / 2.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn generated_geometry_is_detectable() {
        let m = model();
        let spec = FrameSpec::default();
        for s in [5.0, 6.0] {
            let frames = m.generate(&spec, s, 2, 0).unwrap();
            for f in &frames {
                let est = detect_cylinder_centers(f, [(0.0, 0.0), (s, 0.0)], 0.25);
                assert!(est.valid);
                assert!(est.cyl1_error_d <= 0.05 && est.cyl2_error_d <= 0.05, "{est:?}");
            }
        }
        assert!(matches!(m.generate(&spec, 12.0, 2, 0), Err(SurrogateError::SpacingOutOfRange(_))));
        assert!(matches!(m.generate(&spec, 5.0, 0, 0), Err(SurrogateError::NoFrames)));
    }

    #[test]
    fn generation_is_deterministic() {
        let m = model();
        let spec = FrameSpec::default();
        assert_eq!(m.generate(&spec, 6.3, 3, 11).unwrap(), m.generate(&spec, 6.3, 3, 11).unwrap());
    }

    #[test]
    fn corrupted_geometry_is_flagged() {
        let m = model();
        let spec = FrameSpec::default();
        let frames = m.generate(&spec, 5.0, spec.frames_per_period, 0).unwrap();
        assert_eq!(corrupt_geometry(&frames[0], 0.0).unwrap(), frames[0]);
        let bad: Vec<_> = frames.iter().map(|f| corrupt_geometry(f, 0.6).unwrap()).collect();
        let mean = time_average(&bad).unwrap();
        let est = detect_cylinder_centers(&mean, [(0.0, 0.0), (5.0, 0.0)], 0.25);
        assert!((0.5..=0.7).contains(&est.cyl2_error_d), "{est:?}");
        assert!(!est.valid);
        assert!(matches!(corrupt_geometry(&frames[0], 9.0), Err(SurrogateError::ShiftOffGrid(_))));
    }

    fn tiny_archive(n: usize) -> SnapshotArchive {
        let grid = Grid::new(4, 3, -1.0, -1.0, 0.5, 1.0).unwrap();
        let snapshots = (0..n)
            .map(|t| {
                let f = |o: f64| (0..12).map(|k| ((k as f64 + o + t as f64) * 0.37) as f32 as f64).collect();
                FlowSnapshot { grid, u: f(0.0), v: f(1.0), p: f(2.0), spacing: 5.5, time_index: t as u64 }
            })
            .collect();
        SnapshotArchive { grid, spacing: 5.5, dt: 0.1, snapshots }
    }

    #[test]
    fn archive_round_trip() {
        let a = tiny_archive(3);
        let bytes = a.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 3 * 12 * 4);
        let back = SnapshotArchive::decode(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn archive_format_errors() {
        let bytes = tiny_archive(10).encode().unwrap();
        let mut bad = bytes.clone();
        bad[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(SnapshotArchive::decode(&bad), Err(ArchiveError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert_eq!(SnapshotArchive::decode(&bad), Err(ArchiveError::Version(2)));
        let short = &bytes[..bytes.len() - 3 * 12 * 4];
        assert!(matches!(SnapshotArchive::decode(short), Err(ArchiveError::Truncated { .. })));
        assert!(matches!(SnapshotArchive::decode(&bytes[..20]), Err(ArchiveError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(SnapshotArchive::decode(&long), Err(ArchiveError::TrailingBytes(1)));
    }
}
