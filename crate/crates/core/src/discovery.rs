//! Scaling-law recovery from per-spacing optima.
//!
//! Linear and two-segment least-squares fits, nested-model selection,
//! divergence between the two extremal locations, and rectangular landscape
//! grids for plotting.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{best_point, MetricMode, OptimumPoint, PrimaryMetric};
use crate::special::f_survival;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscoveryError {
    #[error("no geometrically valid rows")]
    NoValidRows,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("abscissae are degenerate (zero spread)")]
    DegenerateAbscissae,
    #[error("no admissible split with min_segment = {0}")]
    NoAdmissibleSplit(usize),
    #[error("non-finite input")]
    NonFinite,
}

/// The slice of a results row that discovery needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub spacing: f64,
    pub x_p: f64,
    pub delta_star: f64,
    pub theta: f64,
    pub geom_valid: bool,
}

impl EvidenceRow {
    pub fn metric(&self, metric: PrimaryMetric) -> f64 {
        match metric {
            PrimaryMetric::DeltaStar => self.delta_star,
            PrimaryMetric::Theta => self.theta,
        }
    }
}

fn grouped_valid(rows: &[EvidenceRow]) -> Result<Vec<(f64, Vec<&EvidenceRow>)>, DiscoveryError> {
    let mut valid: Vec<&EvidenceRow> = rows.iter().filter(|r| r.geom_valid).collect();
    if valid.is_empty() {
        return Err(DiscoveryError::NoValidRows);
    }
    valid.sort_by(|a, b| a.spacing.total_cmp(&b.spacing).then(a.x_p.total_cmp(&b.x_p)));
    let mut groups: Vec<(f64, Vec<&EvidenceRow>)> = Vec::new();
    for r in valid {
        match groups.last_mut() {
            Some((s, g)) if *s == r.spacing => g.push(r),
            _ => groups.push((r.spacing, alloc::vec![r])),
        }
    }
    Ok(groups)
}

/// Best station per spacing (valid rows only), sorted by spacing.
pub fn best_per_spacing(rows: &[EvidenceRow], mode: &MetricMode) -> Result<Vec<OptimumPoint>, DiscoveryError> {
    Ok(grouped_valid(rows)?
        .into_iter()
        .map(|(spacing, group)| {
            let pts: Vec<(f64, f64)> = group.iter().map(|r| (r.x_p, r.metric(mode.primary))).collect();
            let (x_star, value) = best_point(&pts, mode).expect("groups are nonempty");
            OptimumPoint { spacing, x_star, value }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sse: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit, DiscoveryError> {
    let n = points.len();
    if n < 2 {
        return Err(DiscoveryError::TooFewPoints { needed: 2, got: n });
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(DiscoveryError::NonFinite);
    }
    let nf = n as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut sst) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - x_mean, y - y_mean);
        sxx += dx * dx;
        sxy += dx * dy;
        sst += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(DiscoveryError::DegenerateAbscissae);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r_squared = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared, sse, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFit {
    /// Midpoint between the last left abscissa and the first right one.
    pub breakpoint: f64,
    /// Number of points in the left segment.
    pub split_index: usize,
    pub left: LinearFit,
    pub right: LinearFit,
    pub total_sse: f64,
}

fn sorted_points(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts
}

/// Two disjoint line segments with an exhaustive split search minimizing
/// the total SSE. Each segment keeps at least `min_segment` points.
pub fn piecewise_fit(points: &[(f64, f64)], min_segment: usize) -> Result<PiecewiseFit, DiscoveryError> {
    let min_segment = min_segment.max(2);
    let n = points.len();
    if n < 2 * min_segment {
        return Err(DiscoveryError::TooFewPoints { needed: 2 * min_segment, got: n });
    }
    let pts = sorted_points(points);
    let mut best: Option<PiecewiseFit> = None;
    for k in min_segment..=(n - min_segment) {
        if pts[k - 1].0 == pts[k].0 {
            continue;
        }
        let (Ok(left), Ok(right)) = (linear_fit(&pts[..k]), linear_fit(&pts[k..])) else {
            continue;
        };
        let total_sse = left.sse + right.sse;
        if best.as_ref().map_or(true, |b| total_sse < b.total_sse) {
            best = Some(PiecewiseFit {
                breakpoint: 0.5 * (pts[k - 1].0 + pts[k].0),
                split_index: k,
                left,
                right,
                total_sse,
            });
        }
    }
    best.ok_or(DiscoveryError::NoAdmissibleSplit(min_segment))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Single,
    TwoSegment,
}

/// Outcome of comparing the single-line and two-segment models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub choice: ModelChoice,
    pub linear: LinearFit,
    pub piecewise: Option<PiecewiseFit>,
    /// Extra-sum-of-squares F statistic (3, n − 5 degrees of freedom).
    pub f_statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// Gaussian-residual BIC of each model, reported for reference.
    pub bic_single: f64,
    pub bic_two_segment: f64,
}

/// Significance level of the nested-model F test.
pub const DEFAULT_ALPHA: f64 = 0.05;

const SINGLE_PARAMS: usize = 2;
const TWO_SEGMENT_PARAMS: usize = 5;

fn bic(sse: f64, n: usize, params: usize, floor: f64) -> f64 {
    let nf = n as f64;
    nf * libm::log(sse.max(floor) / nf) + params as f64 * libm::log(nf)
}

/// Nested-model F test: the two-segment model is kept only if it reduces
/// the residual sum of squares significantly at level `alpha`.
pub fn select_model(points: &[(f64, f64)], min_segment: usize, alpha: f64) -> Result<ModelSelection, DiscoveryError> {
    let linear = linear_fit(points)?;
    let n = points.len();
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sst: f64 = points.iter().map(|p| (p.1 - y_mean) * (p.1 - y_mean)).sum();
    // Residuals at round-off level count as exact.
    let floor = 1e-24 * sst.max(1.0);
    let bic_single = bic(linear.sse, n, SINGLE_PARAMS, floor);
    let single = |piecewise: Option<PiecewiseFit>, f: f64, p: f64, b2: f64| ModelSelection {
        choice: ModelChoice::Single,
        linear,
        piecewise,
        f_statistic: f,
        p_value: p,
        alpha,
        bic_single,
        bic_two_segment: b2,
    };
    if n <= TWO_SEGMENT_PARAMS {
        return Ok(single(None, 0.0, 1.0, f64::NAN));
    }
    let piecewise = match piecewise_fit(points, min_segment) {
        Ok(p) => p,
        Err(DiscoveryError::TooFewPoints { .. }) | Err(DiscoveryError::NoAdmissibleSplit(_)) => {
            return Ok(single(None, 0.0, 1.0, f64::NAN))
        }
        Err(e) => return Err(e),
    };
    let bic_two = bic(piecewise.total_sse, n, TWO_SEGMENT_PARAMS, floor);
    if linear.sse <= floor {
        return Ok(single(Some(piecewise), 0.0, 1.0, bic_two));
    }
    let df1 = (TWO_SEGMENT_PARAMS - SINGLE_PARAMS) as f64;
    let df2 = (n - TWO_SEGMENT_PARAMS) as f64;
    let reduction = (linear.sse - piecewise.total_sse).max(0.0);
    let f = if piecewise.total_sse <= floor {
        f64::INFINITY
    } else {
        (reduction / df1) / (piecewise.total_sse / df2)
    };
    let p = f_survival(f, df1, df2);
    let choice = if p < alpha { ModelChoice::TwoSegment } else { ModelChoice::Single };
    Ok(ModelSelection {
        choice,
        linear,
        piecewise: Some(piecewise),
        f_statistic: f,
        p_value: p,
        alpha,
        bic_single,
        bic_two_segment: bic_two,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub spacing: f64,
    pub x_delta_star: f64,
    pub x_theta_star: f64,
    pub abs_divergence: f64,
}

/// Spacings closer than this are treated as the same configuration.
pub const DIVERGENCE_MATCH_TOLERANCE: f64 = 0.1;

/// Pair the two optima lists by spacing (exact, else nearest within 0.1 D)
/// and report `|x_θ* − x_δ*|`. Unmatched spacings come back as warnings.
pub fn divergence_table(delta_opts: &[OptimumPoint], theta_opts: &[OptimumPoint]) -> (Vec<DivergenceRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for d in delta_opts {
        let nearest = theta_opts
            .iter()
            .map(|t| (libm::fabs(t.spacing - d.spacing), t))
            .filter(|(dist, _)| *dist <= DIVERGENCE_MATCH_TOLERANCE + 1e-12)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.spacing.total_cmp(&b.1.spacing)));
        match nearest {
            Some((_, t)) => rows.push(DivergenceRow {
                spacing: d.spacing,
                x_delta_star: d.x_star,
                x_theta_star: t.x_star,
                abs_divergence: libm::fabs(t.x_star - d.x_star),
            }),
            None => warnings.push(alloc::format!("no θ optimum within {DIVERGENCE_MATCH_TOLERANCE} D of spacing {}", d.spacing)),
        }
    }
    (rows, warnings)
}

/// Rectangular `(spacing × station)` view of one metric; `None` marks
/// stations that are absent for a spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub metric: PrimaryMetric,
    pub spacings: Vec<f64>,
    pub stations: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn landscape_grid(rows: &[EvidenceRow], metric: PrimaryMetric) -> Result<LandscapeGrid, DiscoveryError> {
    let groups = grouped_valid(rows)?;
    let mut stations: Vec<f64> = groups.iter().flat_map(|(_, g)| g.iter().map(|r| r.x_p)).collect();
    stations.sort_by(f64::total_cmp);
    stations.dedup();
    let values = groups
        .iter()
        .map(|(_, g)| {
            stations
                .iter()
                .map(|&x| g.iter().find(|r| r.x_p == x).map(|r| r.metric(metric)))
                .collect()
        })
        .collect();
    Ok(LandscapeGrid { metric, spacings: groups.iter().map(|(s, _)| *s).collect(), stations, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn exact_line() {
        let f = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert_eq!((f.slope, f.intercept, f.r_squared), (2.0, 1.0, 1.0));
        assert_eq!(f.sse, 0.0);
    }

    #[test]
    fn linear_fit_errors() {
        assert_eq!(linear_fit(&[(1.0, 2.0)]), Err(DiscoveryError::TooFewPoints { needed: 2, got: 1 }));
        assert_eq!(linear_fit(&[(1.0, 2.0), (1.0, 3.0)]), Err(DiscoveryError::DegenerateAbscissae));
    }

    #[test]
    fn piecewise_recovers_exact_split() {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let x = i as f64;
                (x, if i < 6 { 2.0 } else { x - 4.0 })
            })
            .collect();
        let p = piecewise_fit(&pts, 3).unwrap();
        assert_eq!(p.split_index, 6);
        assert_eq!(p.breakpoint, 5.5);
        assert!(p.total_sse < 1e-20);
        let sel = select_model(&pts, 3, DEFAULT_ALPHA).unwrap();
        assert_eq!(sel.choice, ModelChoice::TwoSegment);
    }

    #[test]
    fn piecewise_needs_enough_points() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        assert!(matches!(piecewise_fit(&pts, 3), Err(DiscoveryError::TooFewPoints { .. })));
    }

    #[test]
    fn collinear_data_selects_single() {
        let pts: Vec<(f64, f64)> = (0..9).map(|i| (i as f64 * 0.7, 0.3 * i as f64 * 0.7 - 1.0)).collect();
        assert_eq!(select_model(&pts, 3, DEFAULT_ALPHA).unwrap().choice, ModelChoice::Single);
    }

    fn opt(s: f64, x: f64) -> OptimumPoint {
        OptimumPoint { spacing: s, x_star: x, value: 0.0 }
    }

    #[test]
    fn divergence_matching() {
        let (rows, warn) = divergence_table(&[opt(5.0, 0.5), opt(7.0, 2.0)], &[opt(5.05, 3.8), opt(8.0, 6.8)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].abs_divergence, 3.3);
        assert_eq!(warn.len(), 1);
        let (rows, warn) = divergence_table(&[opt(4.0, 0.5)], &[opt(4.5, 2.0)]);
        assert!(rows.is_empty() && warn.len() == 1);
    }

    fn row(s: f64, x: f64, d: f64, valid: bool) -> EvidenceRow {
        EvidenceRow { spacing: s, x_p: x, delta_star: d, theta: -d, geom_valid: valid }
    }

    #[test]
    fn landscape_pads_short_sweeps() {
        let rows = vec![row(3.5, 0.5, 1.0, true), row(3.5, 0.65, 2.0, true), row(4.0, 0.5, 3.0, true)];
        let g = landscape_grid(&rows, PrimaryMetric::DeltaStar).unwrap();
        assert_eq!(g.spacings, vec![3.5, 4.0]);
        assert_eq!(g.stations, vec![0.5, 0.65]);
        assert_eq!(g.values, vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), None]]);
        assert_eq!(landscape_grid(&[], PrimaryMetric::Theta), Err(DiscoveryError::NoValidRows));
    }

    #[test]
    fn best_per_spacing_skips_invalid() {
        let rows = vec![row(5.0, 0.5, 2.0, true), row(5.0, 0.65, 1.0, true), row(6.0, 0.5, 0.1, false)];
        let b = best_per_spacing(&rows, &MetricMode::delta_star()).unwrap();
        assert_eq!(b, vec![OptimumPoint { spacing: 5.0, x_star: 0.65, value: 1.0 }]);
        assert_eq!(
            best_per_spacing(&[row(6.0, 0.5, 0.1, false)], &MetricMode::delta_star()),
            Err(DiscoveryError::NoValidRows)
        );
    }
}
