use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use wakeprobe_core::discovery::*;
use wakeprobe_core::metrics::{MetricMode, OptimumPoint};
use wakeprobe_core::special::f_survival;

const S: [f64; 7] = [3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.4];
const X_DELTA: [f64; 7] = [0.5, 0.5, 0.5, 0.65, 2.75, 3.65, 4.55];
const X_THETA: [f64; 7] = [2.15, 3.05, 4.10, 5.45, 6.35, 7.25, 8.00];
const DIVERGENCE: [f64; 7] = [1.65, 2.55, 3.60, 4.80, 3.60, 3.60, 3.45];

fn pts(y: &[f64; 7]) -> Vec<(f64, f64)> {
    S.iter().copied().zip(y.iter().copied()).collect()
}

// Reference values from an independent numpy least-squares oracle.
#[test]
fn theta_law_matches_oracle() {
    let fit = linear_fit(&pts(&X_THETA)).unwrap();
    assert!((fit.slope - 1.0186333785051598).abs() < 1e-9);
    assert!((fit.intercept - -1.4137079120191787).abs() < 1e-9);
    assert!((fit.r_squared - 0.9957066763105806).abs() < 1e-9);
    assert!((fit.sse - 0.12262652454915056).abs() < 1e-9);
    let mad = S.iter().zip(&X_THETA).map(|(s, x)| (x - (s - 1.2)).abs()).sum::<f64>() / 7.0;
    assert!((mad - 0.15).abs() < 1e-12);
}

#[test]
fn delta_law_has_breakpoint_near_seven() {
    let lin = linear_fit(&pts(&X_DELTA)).unwrap();
    assert!((lin.sse - 3.012829276555822).abs() < 1e-9);
    let pw = piecewise_fit(&pts(&X_DELTA), 2).unwrap();
    assert_eq!(pw.split_index, 4);
    assert!((pw.breakpoint - 7.0).abs() < 1e-12);
    assert!((pw.total_sse - 0.008244464944649478).abs() < 1e-9);
}

#[test]
fn model_selection_oracle() {
    let d = select_model(&pts(&X_DELTA), 2, DEFAULT_ALPHA).unwrap();
    assert_eq!(d.choice, ModelChoice::TwoSegment);
    assert!((d.f_statistic - 242.95773643553005).abs() < 1e-6);
    assert!((d.p_value - 0.004101869770684083).abs() < 1e-9);
    let t = select_model(&pts(&X_THETA), 2, DEFAULT_ALPHA).unwrap();
    assert_eq!(t.choice, ModelChoice::Single);
    assert!((t.f_statistic - 16.027074834471055).abs() < 1e-6);
    assert!((t.p_value - 0.059300591925644096).abs() < 1e-9);
    // BIC is reported but not used: it would prefer two segments for θ too.
    assert!((t.bic_single - -24.419834245203884).abs() < 1e-9);
    assert!((t.bic_two_segment - -41.12559677619603).abs() < 1e-9);
}

#[test]
fn divergence_reproduces_table() {
    let opt = |x: &[f64; 7]| -> Vec<OptimumPoint> {
        S.iter().zip(x).map(|(&spacing, &x_star)| OptimumPoint { spacing, x_star, value: 0.0 }).collect()
    };
    let (rows, warnings) = divergence_table(&opt(&X_DELTA), &opt(&X_THETA));
    assert!(warnings.is_empty());
    for (r, want) in rows.iter().zip(DIVERGENCE) {
        assert_eq!(format!("{:.2}", r.abs_divergence), format!("{want:.2}"));
    }
    // rises through 6.5, drops at 7.5
    assert!(rows[..4].windows(2).all(|w| w[1].abs_divergence > w[0].abs_divergence));
    assert!(rows[4].abs_divergence < rows[3].abs_divergence);
}

#[test]
fn unmatched_spacing_warns() {
    let d = [OptimumPoint { spacing: 5.0, x_star: 0.5, value: 0.0 }];
    let t = [OptimumPoint { spacing: 5.2, x_star: 3.8, value: 0.0 }];
    let (rows, warnings) = divergence_table(&d, &t);
    assert!(rows.is_empty());
    assert_eq!(warnings.len(), 1);
}

#[test]
fn f_tail_agrees_with_statrs() {
    for (d1, d2) in [(3.0, 2.0), (3.0, 7.0), (1.0, 30.0), (5.5, 12.0)] {
        let dist = FisherSnedecor::new(d1, d2).unwrap();
        for f in [0.05, 0.7, 1.0, 2.5, 16.0, 243.0] {
            let want = 1.0 - dist.cdf(f);
            let got = f_survival(f, d1, d2);
            assert!((got - want).abs() < 1e-10, "F({d1},{d2}) at {f}: {got} vs {want}");
        }
    }
}

#[test]
fn best_per_spacing_ignores_invalid_rows() {
    let row = |spacing, x_p, delta_star, geom_valid| EvidenceRow { spacing, x_p, delta_star, theta: 0.0, geom_valid };
    let rows = [row(5.0, 0.5, 0.3, true), row(5.0, 0.65, 0.1, false), row(5.0, 0.8, 0.2, true), row(6.0, 0.5, 0.4, true)];
    let best = best_per_spacing(&rows, &MetricMode::delta_star()).unwrap();
    assert_eq!(best.len(), 2);
    assert_eq!(best[0].x_star, 0.8);
    assert!(matches!(best_per_spacing(&rows[1..2], &MetricMode::delta_star()), Err(DiscoveryError::NoValidRows)));
}

#[test]
fn landscape_marks_missing_stations() {
    let row = |spacing, x_p| EvidenceRow { spacing, x_p, delta_star: x_p, theta: -x_p, geom_valid: true };
    let g = landscape_grid(&[row(4.0, 0.5), row(4.0, 0.65), row(5.0, 0.5)], wakeprobe_core::metrics::PrimaryMetric::Theta)
        .unwrap();
    assert_eq!(g.spacings, vec![4.0, 5.0]);
    assert_eq!(g.values[1], vec![Some(-0.5), None]);
}

fn point_set() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-50.0f64..50.0, -20.0f64..20.0), 6..30).prop_filter("distinct abscissae", |v| {
        let mut xs: Vec<f64> = v.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.windows(2).all(|w| w[1] - w[0] > 1e-3)
    })
}

proptest! {
    #[test]
    fn ols_is_permutation_invariant(points in point_set(), seed in any::<u64>()) {
        let a = linear_fit(&points).unwrap();
        let mut shuffled = points.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = linear_fit(&shuffled).unwrap();
        prop_assert!((a.slope - b.slope).abs() <= 1e-9 * (1.0 + a.slope.abs()));
        prop_assert!((a.intercept - b.intercept).abs() <= 1e-9 * (1.0 + a.intercept.abs()));
    }

    #[test]
    fn ols_affine_equivariance(points in point_set(), a in 0.1f64..5.0, c in -10.0f64..10.0, t in -10.0f64..10.0) {
        // y → a·y + c scales the slope by a; x → x + t keeps the slope
        let base = linear_fit(&points).unwrap();
        let scaled: Vec<_> = points.iter().map(|&(x, y)| (x + t, a * y + c)).collect();
        let f = linear_fit(&scaled).unwrap();
        prop_assert!((f.slope - a * base.slope).abs() <= 1e-8 * (1.0 + (a * base.slope).abs()));
        let want_b = a * base.intercept + c - a * base.slope * t;
        prop_assert!((f.intercept - want_b).abs() <= 1e-7 * (1.0 + want_b.abs()));
    }

    #[test]
    fn piecewise_never_worse_than_line(points in point_set()) {
        let lin = linear_fit(&points).unwrap();
        let pw = piecewise_fit(&points, 2).unwrap();
        prop_assert!(pw.total_sse <= lin.sse * (1.0 + 1e-9) + 1e-12);
        prop_assert!(pw.split_index >= 2 && pw.split_index <= points.len() - 2);
    }

    #[test]
    fn exact_line_is_single(slope in -3.0f64..3.0, icpt in -5.0f64..5.0, n in 6usize..20) {
        let points: Vec<_> = (0..n).map(|i| { let x = 3.5 + 0.4 * i as f64; (x, slope * x + icpt) }).collect();
        let sel = select_model(&points, 2, DEFAULT_ALPHA).unwrap();
        prop_assert_eq!(sel.choice, ModelChoice::Single);
    }
}
