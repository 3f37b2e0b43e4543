//! Gridded flow fields, time statistics, profile extraction and cylinder
//! detection.
//!
//! Fields are stored row-major with `x` varying fastest: the value at column
//! `i`, row `j` lives at index `j * nx + i`.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Velocity magnitude below which a cell counts as solid (U∞ units).
pub const SOLID_THRESHOLD: f64 = 1e-6;

/// Default geometry tolerance for cylinder-center matching, in D.
pub const DEFAULT_GEOMETRY_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("field `{field}` has {got} values, grid needs {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("field `{0}` contains non-finite values")]
    NonFinite(&'static str),
    #[error("no snapshots supplied")]
    Empty,
    #[error("snapshots do not share grid and spacing")]
    GridMismatch,
    #[error("probe station x_p = {x_p} outside grid extent [{x_min}, {x_max}]")]
    OutOfBounds { x_p: f64, x_min: f64, x_max: f64 },
}

/// Uniform Cartesian grid; coordinates in cylinder diameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self, FieldError> {
        let grid = Self { nx, ny, x0, y0, dx, dy };
        grid.validate()?;
        Ok(grid)
    }

    /// Node-centred grid with `nx × ny` nodes spanning `[x_min, x_max] × [y_min, y_max]`.
    pub fn spanning(nx: usize, ny: usize, x: (f64, f64), y: (f64, f64)) -> Result<Self, FieldError> {
        if nx < 2 || ny < 2 {
            return Err(FieldError::InvalidGrid("need at least 2 nodes per axis"));
        }
        Self::new(
            nx,
            ny,
            x.0,
            y.0,
            (x.1 - x.0) / (nx - 1) as f64,
            (y.1 - y.0) / (ny - 1) as f64,
        )
    }

    /// The 256 × 128 rasterization over x ∈ [−2, 14], y ∈ [−4, 4].
    pub fn tandem_default() -> Self {
        Self::spanning(256, 128, (-2.0, 14.0), (-4.0, 4.0)).expect("static grid is valid")
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.nx < 2 || self.ny < 2 {
            return Err(FieldError::InvalidGrid("need at least 2 nodes per axis"));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(FieldError::InvalidGrid("spacing must be positive"));
        }
        if !(self.x0.is_finite() && self.y0.is_finite() && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(FieldError::InvalidGrid("non-finite geometry"));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.y(j)).collect()
    }
}

/// One instantaneous velocity/pressure field for a given spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub spacing: f64,
    pub time_index: u64,
}

impl FlowSnapshot {
    pub fn new(grid: Grid, u: Vec<f64>, v: Vec<f64>, p: Vec<f64>, spacing: f64, time_index: u64) -> Result<Self, FieldError> {
        let snap = Self { grid, u, v, p, spacing, time_index };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        self.grid.validate()?;
        for (name, data) in [("u", &self.u), ("v", &self.v), ("p", &self.p)] {
            check_field(name, data, self.grid.len())?;
        }
        Ok(())
    }
}

fn check_field(name: &'static str, data: &[f64], expected: usize) -> Result<(), FieldError> {
    if data.len() != expected {
        return Err(FieldError::LengthMismatch { field: name, expected, got: data.len() });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FieldError::NonFinite(name));
    }
    Ok(())
}

/// Time-averaged velocity field with optional streamwise Reynolds stress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanField {
    pub grid: Grid,
    pub u_mean: Vec<f64>,
    pub v_mean: Vec<f64>,
    pub r_uu: Option<Vec<f64>>,
    pub n_samples: usize,
    pub spacing: f64,
}

/// Streamwise velocity sampled along `y` at one probe station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub x_p: f64,
}

impl VelocityProfile {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Result of locating the two solid bodies in a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryEstimate {
    pub cyl1_center: (f64, f64),
    pub cyl2_center: (f64, f64),
    pub cyl1_error_d: f64,
    pub cyl2_error_d: f64,
    pub valid: bool,
}

impl GeometryEstimate {
    /// Sentinel returned when fewer than two solid regions are found.
    pub fn failed() -> Self {
        Self {
            cyl1_center: (f64::NAN, f64::NAN),
            cyl2_center: (f64::NAN, f64::NAN),
            cyl1_error_d: f64::INFINITY,
            cyl2_error_d: f64::INFINITY,
            valid: false,
        }
    }

    /// Validity recomputed from the stored errors at `tolerance`.
    pub fn is_valid_at(cyl1_error_d: f64, cyl2_error_d: f64, tolerance: f64) -> bool {
        cyl1_error_d <= tolerance && cyl2_error_d <= tolerance
    }
}

/// Anything that carries gridded u and v velocities.
pub trait VelocityField {
    fn grid(&self) -> &Grid;
    fn u(&self) -> &[f64];
    fn v(&self) -> &[f64];
}

impl VelocityField for FlowSnapshot {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn u(&self) -> &[f64] {
        &self.u
    }
    fn v(&self) -> &[f64] {
        &self.v
    }
}

impl VelocityField for MeanField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn u(&self) -> &[f64] {
        &self.u_mean
    }
    fn v(&self) -> &[f64] {
        &self.v_mean
    }
}

fn check_consistent(snapshots: &[FlowSnapshot]) -> Result<&FlowSnapshot, FieldError> {
    let first = snapshots.first().ok_or(FieldError::Empty)?;
    for s in snapshots {
        s.validate()?;
        if s.grid != first.grid || s.spacing != first.spacing {
            return Err(FieldError::GridMismatch);
        }
    }
    Ok(first)
}

/// Per-cell arithmetic mean over the snapshot list.
pub fn time_average(snapshots: &[FlowSnapshot]) -> Result<MeanField, FieldError> {
    let first = check_consistent(snapshots)?;
    let n = first.grid.len();
    let mut u_mean = vec![0.0; n];
    let mut v_mean = vec![0.0; n];
    for s in snapshots {
        for (acc, x) in u_mean.iter_mut().zip(&s.u) {
            *acc += x;
        }
        for (acc, x) in v_mean.iter_mut().zip(&s.v) {
            *acc += x;
        }
    }
    let inv = 1.0 / snapshots.len() as f64;
    if snapshots.len() > 1 {
        u_mean.iter_mut().for_each(|x| *x *= inv);
        v_mean.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(MeanField {
        grid: first.grid,
        u_mean,
        v_mean,
        r_uu: None,
        n_samples: snapshots.len(),
        spacing: first.spacing,
    })
}

/// Per-cell population variance of `u` about `mean.u_mean`.
pub fn reynolds_stress_uu(snapshots: &[FlowSnapshot], mean: &MeanField) -> Result<Vec<f64>, FieldError> {
    let first = check_consistent(snapshots)?;
    if first.grid != mean.grid || mean.u_mean.len() != mean.grid.len() {
        return Err(FieldError::GridMismatch);
    }
    let mut acc = vec![0.0; mean.grid.len()];
    for s in snapshots {
        for ((a, u), m) in acc.iter_mut().zip(&s.u).zip(&mean.u_mean) {
            let d = u - m;
            *a += d * d;
        }
    }
    let inv = 1.0 / snapshots.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Time average plus Reynolds stress in one call.
pub fn mean_with_stress(snapshots: &[FlowSnapshot]) -> Result<MeanField, FieldError> {
    let mut mean = time_average(snapshots)?;
    mean.r_uu = Some(reynolds_stress_uu(snapshots, &mean)?);
    Ok(mean)
}

/// Streamwise velocity at station `x_p`, linearly interpolated between the
/// bracketing grid columns.
///
/// With `ny_override = Some(n)` the column is resampled at `n` uniform
/// ordinates spanning the grid's y extent (linear in y as well).
pub fn extract_profile(mean: &MeanField, x_p: f64, ny_override: Option<usize>) -> Result<VelocityProfile, FieldError> {
    let g = &mean.grid;
    let (x_min, x_max) = (g.x0, g.x_max());
    if !(x_p >= x_min && x_p <= x_max) {
        return Err(FieldError::OutOfBounds { x_p, x_min, x_max });
    }
    let t = (x_p - g.x0) / g.dx;
    let mut i0 = libm::floor(t) as usize;
    if i0 >= g.nx - 1 {
        i0 = g.nx - 2;
    }
    let w = t - i0 as f64;
    let column: Vec<f64> = (0..g.ny)
        .map(|j| {
            let a = mean.u_mean[g.index(i0, j)];
            if w == 0.0 {
                return a;
            }
            let b = mean.u_mean[g.index(i0 + 1, j)];
            if w == 1.0 {
                b
            } else {
                a + w * (b - a)
            }
        })
        .collect();

    match ny_override {
        None => Ok(VelocityProfile { y: g.y_nodes(), u: column, x_p }),
        Some(n) => {
            if n < 2 {
                return Err(FieldError::InvalidGrid("profile needs at least 2 samples"));
            }
            let (y_lo, y_hi) = (g.y0, g.y_max());
            let mut y = Vec::with_capacity(n);
            let mut u = Vec::with_capacity(n);
            for k in 0..n {
                let yk = y_lo + (y_hi - y_lo) * k as f64 / (n - 1) as f64;
                let s = ((yk - g.y0) / g.dy).clamp(0.0, (g.ny - 1) as f64);
                let j0 = (libm::floor(s) as usize).min(g.ny - 2);
                let f = s - j0 as f64;
                y.push(yk);
                u.push(column[j0] + f * (column[j0 + 1] - column[j0]));
            }
            Ok(VelocityProfile { y, u, x_p })
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    cells: usize,
    sx: f64,
    sy: f64,
}

impl Component {
    fn centroid(&self) -> (f64, f64) {
        (self.sx / self.cells as f64, self.sy / self.cells as f64)
    }
}

fn solid_components<F: VelocityField + ?Sized>(field: &F) -> Vec<Component> {
    let g = field.grid();
    let (u, v) = (field.u(), field.v());
    let solid: Vec<bool> = u
        .iter()
        .zip(v)
        .map(|(a, b)| libm::fabs(*a) <= SOLID_THRESHOLD && libm::fabs(*b) <= SOLID_THRESHOLD)
        .collect();
    let mut seen = vec![false; g.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..g.len() {
        if !solid[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Component { cells: 0, sx: 0.0, sy: 0.0 };
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k % g.nx, k / g.nx);
            comp.cells += 1;
            comp.sx += g.x(i);
            comp.sy += g.y(j);
            let mut visit = |n: usize| {
                if solid[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < g.nx {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - g.nx);
            }
            if j + 1 < g.ny {
                visit(k + g.nx);
            }
        }
        components.push(comp);
    }
    components
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    libm::hypot(a.0 - b.0, a.1 - b.1)
}

/// Locate the two largest solid regions (|u|, |v| ≤ [`SOLID_THRESHOLD`]) and
/// match their centroids to the expected cylinder centers.
///
/// Fewer than two regions yields [`GeometryEstimate::failed`].
pub fn detect_cylinder_centers<F: VelocityField + ?Sized>(
    field: &F,
    expected: [(f64, f64); 2],
    tolerance: f64,
) -> GeometryEstimate {
    let mut comps = solid_components(field);
    if comps.len() < 2 {
        return GeometryEstimate::failed();
    }
    // Largest first; ties resolved toward smaller x for determinism.
    comps.sort_by(|a, b| {
        b.cells
            .cmp(&a.cells)
            .then_with(|| a.centroid().0.total_cmp(&b.centroid().0))
    });
    let (ca, cb) = (comps[0].centroid(), comps[1].centroid());

    // Assign by nearest expected center: pick the pairing with the smaller
    // total distance; on a tie the smaller-x component goes to cylinder 1.
    let straight = distance(ca, expected[0]) + distance(cb, expected[1]);
    let swapped = distance(cb, expected[0]) + distance(ca, expected[1]);
    let (c1, c2) = if straight < swapped || (straight == swapped && ca.0 <= cb.0) {
        (ca, cb)
    } else {
        (cb, ca)
    };
    let e1 = distance(c1, expected[0]);
    let e2 = distance(c2, expected[1]);
    GeometryEstimate {
        cyl1_center: c1,
        cyl2_center: c2,
        cyl1_error_d: e1,
        cyl2_error_d: e2,
        valid: GeometryEstimate::is_valid_at(e1, e2, tolerance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> Grid {
        Grid::new(5, 4, 0.0, -1.5, 1.0, 1.0).unwrap()
    }

    fn snap(grid: Grid, u: f64) -> FlowSnapshot {
        let n = grid.len();
        FlowSnapshot::new(grid, vec![u; n], vec![0.0; n], vec![0.0; n], 5.0, 0).unwrap()
    }

    #[test]
    fn mean_of_zero_and_two_is_one() {
        let g = small_grid();
        let m = time_average(&[snap(g, 0.0), snap(g, 2.0)]).unwrap();
        assert!(m.u_mean.iter().all(|&x| x == 1.0));
        assert_eq!(m.n_samples, 2);
        let r = reynolds_stress_uu(&[snap(g, 0.0), snap(g, 2.0)], &m).unwrap();
        assert!(r.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn single_snapshot_is_identity() {
        let g = small_grid();
        let mut s = snap(g, 0.0);
        for (k, u) in s.u.iter_mut().enumerate() {
            *u = k as f64 * 0.37 - 1.1;
        }
        let m = time_average(core::slice::from_ref(&s)).unwrap();
        assert_eq!(m.u_mean, s.u);
        assert_eq!(m.v_mean, s.v);
    }

    #[test]
    fn constant_in_time_has_zero_stress() {
        let g = small_grid();
        let frames = vec![snap(g, 0.7); 4];
        let m = mean_with_stress(&frames).unwrap();
        assert!(m.r_uu.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert_eq!(time_average(&[]), Err(FieldError::Empty));
        let g = small_grid();
        let g2 = Grid::new(5, 4, 0.0, -1.5, 1.0, 0.5).unwrap();
        assert_eq!(time_average(&[snap(g, 0.0), snap(g2, 0.0)]), Err(FieldError::GridMismatch));
        let mut other = snap(g, 0.0);
        other.spacing = 6.0;
        assert_eq!(time_average(&[snap(g, 0.0), other]), Err(FieldError::GridMismatch));
    }

    #[test]
    fn snapshot_validation() {
        let g = small_grid();
        assert!(matches!(
            FlowSnapshot::new(g, vec![0.0; 3], vec![0.0; 20], vec![0.0; 20], 5.0, 0),
            Err(FieldError::LengthMismatch { field: "u", .. })
        ));
        let mut u = vec![0.0; 20];
        u[3] = f64::NAN;
        assert_eq!(
            FlowSnapshot::new(g, u, vec![0.0; 20], vec![0.0; 20], 5.0, 0),
            Err(FieldError::NonFinite("u"))
        );
        assert!(Grid::new(1, 4, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(Grid::new(2, 4, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    fn linear_in_x(g: Grid) -> MeanField {
        let mut u = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                u[g.index(i, j)] = g.x(i);
            }
        }
        MeanField { grid: g, v_mean: vec![0.0; g.len()], u_mean: u, r_uu: None, n_samples: 1, spacing: 5.0 }
    }

    #[test]
    fn profile_on_node_copies_column() {
        let g = small_grid();
        let mut m = linear_in_x(g);
        for (k, u) in m.u_mean.iter_mut().enumerate() {
            *u = (k * k) as f64;
        }
        let p = extract_profile(&m, 2.0, None).unwrap();
        let col: Vec<f64> = (0..g.ny).map(|j| m.u_mean[g.index(2, j)]).collect();
        assert_eq!(p.u, col);
        assert_eq!(p.y, g.y_nodes());
        // last node too
        let p = extract_profile(&m, g.x_max(), None).unwrap();
        assert_eq!(p.u[0], m.u_mean[g.index(4, 0)]);
    }

    #[test]
    fn profile_exact_on_linear_field() {
        let g = small_grid();
        let m = linear_in_x(g);
        let p = extract_profile(&m, 2.5, None).unwrap();
        assert!(p.u.iter().all(|&u| u == 2.5));
        let p = extract_profile(&m, 1.25, Some(9)).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.u.iter().all(|&u| (u - 1.25).abs() < 1e-15));
        assert_eq!(p.y[0], g.y0);
        assert_eq!(p.y[8], g.y_max());
    }

    #[test]
    fn profile_out_of_bounds() {
        let m = linear_in_x(small_grid());
        assert!(matches!(extract_profile(&m, 4.01, None), Err(FieldError::OutOfBounds { .. })));
        assert!(matches!(extract_profile(&m, -0.1, None), Err(FieldError::OutOfBounds { .. })));
        assert!(matches!(extract_profile(&m, f64::NAN, None), Err(FieldError::OutOfBounds { .. })));
    }

    #[test]
    fn free_stream_has_no_cylinders() {
        let g = Grid::tandem_default();
        let s = snap(g, 1.0);
        let est = detect_cylinder_centers(&s, [(0.0, 0.0), (5.0, 0.0)], 0.25);
        assert!(!est.valid);
        assert!(est.cyl1_error_d.is_infinite() && est.cyl2_error_d.is_infinite());
    }

    fn disks(g: Grid, centers: &[(f64, f64)]) -> FlowSnapshot {
        let mut s = snap(g, 1.0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = (g.x(i), g.y(j));
                if centers.iter().any(|c| (x - c.0).powi(2) + (y - c.1).powi(2) <= 0.25) {
                    s.u[g.index(i, j)] = 0.0;
                }
            }
        }
        s
    }

    #[test]
    fn detects_and_matches_two_disks() {
        let g = Grid::tandem_default();
        // Expected order deliberately reversed relative to component size order.
        let s = disks(g, &[(0.0, 0.0), (7.0, 0.5)]);
        let est = detect_cylinder_centers(&s, [(0.0, 0.0), (7.0, 0.5)], 0.25);
        assert!(est.valid);
        assert!(est.cyl1_error_d < 0.05 && est.cyl2_error_d < 0.05);
        assert!(est.cyl1_center.0 < est.cyl2_center.0);
        let swapped = detect_cylinder_centers(&s, [(7.0, 0.5), (0.0, 0.0)], 0.25);
        assert!(swapped.cyl1_center.0 > 6.0);
    }

    #[test]
    fn single_disk_is_failure() {
        let g = Grid::tandem_default();
        let s = disks(g, &[(0.0, 0.0)]);
        assert!(!detect_cylinder_centers(&s, [(0.0, 0.0), (5.0, 0.0)], 0.25).valid);
    }
}
