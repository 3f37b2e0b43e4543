//! Writer output: a Markdown report, fits JSON and SVG figures, all derived
//! from the CSV alone so that identical evidence gives identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use wakeprobe_core::discovery::{
    best_per_spacing, divergence_table, landscape_grid, select_model, DiscoveryError, DivergenceRow, EvidenceRow,
    LandscapeGrid, ModelChoice, ModelSelection, DEFAULT_ALPHA,
};
use wakeprobe_core::metrics::{MetricMode, OptimumPoint, PrimaryMetric};

use crate::evidence::{fmt_g9, read_rows, EvidenceError, ResultRow};
use crate::svg::{heatmap, line_chart, Series, SvgError};

/// Points per segment in the two-segment fits.
pub const MIN_SEGMENT: usize = 3;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("evidence CSV has no rows")]
    Empty,
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: PrimaryMetric,
    pub optima: Vec<OptimumPoint>,
    /// Absent when fewer than two spacings are valid.
    pub selection: Option<ModelSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportData {
    pub n_rows: usize,
    pub n_spacings: usize,
    pub n_valid_spacings: usize,
    pub tolerance: f64,
    pub delta_star: MetricSummary,
    pub theta: MetricSummary,
    pub divergence: Vec<DivergenceRow>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub landscapes: [LandscapeGrid; 2],
}

fn summarize(evidence: &[EvidenceRow], metric: PrimaryMetric) -> Result<MetricSummary, ReportError> {
    let optima = best_per_spacing(evidence, &MetricMode::for_metric(metric))?;
    let points: Vec<(f64, f64)> = optima.iter().map(|o| (o.spacing, o.x_star)).collect();
    let selection = if points.len() >= 2 { Some(select_model(&points, MIN_SEGMENT, DEFAULT_ALPHA)?) } else { None };
    Ok(MetricSummary { metric, optima, selection })
}

/// Everything the report states, recomputed from `rows`. Validity comes
/// from the error columns at `tolerance`, not from the stored flag.
pub fn analyze(rows: &[ResultRow], tolerance: f64) -> Result<ReportData, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let evidence: Vec<EvidenceRow> = rows.iter().map(|r| r.evidence(tolerance)).collect();
    let delta_star = summarize(&evidence, PrimaryMetric::DeltaStar)?;
    let theta = summarize(&evidence, PrimaryMetric::Theta)?;
    let (divergence, warnings) = divergence_table(&delta_star.optima, &theta.optima);
    let mut spacings: Vec<f64> = rows.iter().map(|r| r.spacing).collect();
    spacings.sort_by(f64::total_cmp);
    spacings.dedup();
    Ok(ReportData {
        n_rows: rows.len(),
        n_spacings: spacings.len(),
        n_valid_spacings: delta_star.optima.len(),
        tolerance,
        landscapes: [
            landscape_grid(&evidence, PrimaryMetric::DeltaStar)?,
            landscape_grid(&evidence, PrimaryMetric::Theta)?,
        ],
        delta_star,
        theta,
        divergence,
        warnings,
    })
}

fn law_name(metric: PrimaryMetric) -> &'static str {
    match metric {
        PrimaryMetric::DeltaStar => "x*_delta_star",
        PrimaryMetric::Theta => "x*_theta",
    }
}

fn choice_name(c: ModelChoice) -> &'static str {
    match c {
        ModelChoice::Single => "single",
        ModelChoice::TwoSegment => "two_segment",
    }
}

pub const FIGURES: [&str; 4] = ["scaling.svg", "landscape_delta_star.svg", "landscape_theta.svg", "divergence.svg"];

pub fn render_markdown(d: &ReportData, csv_name: &str) -> String {
    let g = fmt_g9;
    let mut md = String::new();
    let _ = writeln!(md, "# Wake exploration report\n");
    let _ = writeln!(
        md,
        "Evidence: `{csv_name}`, {} rows over {} spacings, {} geometrically valid at tolerance {} D.\n",
        d.n_rows,
        d.n_spacings,
        d.n_valid_spacings,
        g(d.tolerance)
    );
    let _ = writeln!(md, "## Optimal probe stations\n");
    let _ = writeln!(md, "| S/D | x*_delta_star/D | min delta_star/D | x*_theta/D | max theta/D | abs_dx*/D |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for (dl, th) in d.delta_star.optima.iter().zip(&d.theta.optima) {
        let div = d.divergence.iter().find(|r| r.spacing == dl.spacing).map(|r| g(r.abs_divergence));
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            g(dl.spacing),
            g(dl.x_star),
            g(dl.value),
            g(th.x_star),
            g(th.value),
            div.unwrap_or_else(|| "-".into())
        );
    }
    let _ = writeln!(md, "\n## Scaling-law fits\n");
    let _ = writeln!(md, "| law | segment | slope | intercept | r_squared | n |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for s in [&d.theta, &d.delta_star] {
        let Some(sel) = &s.selection else { continue };
        let mut fits = vec![("all", sel.linear)];
        if let Some(p) = &sel.piecewise {
            fits.push(("left", p.left));
            fits.push(("right", p.right));
        }
        for (seg, f) in fits {
            let _ = writeln!(
                md,
                "| {} | {seg} | {} | {} | {} | {} |",
                law_name(s.metric),
                g(f.slope),
                g(f.intercept),
                g(f.r_squared),
                f.n
            );
        }
    }
    let _ = writeln!(md, "\n## Model selection\n");
    let _ = writeln!(md, "Nested F test at significance {}; two segments need at least {MIN_SEGMENT} spacings each.\n", g(DEFAULT_ALPHA));
    let _ = writeln!(md, "| law | breakpoint S/D | F | p | choice |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for s in [&d.theta, &d.delta_star] {
        match &s.selection {
            Some(sel) => {
                let bp = sel.piecewise.map(|p| g(p.breakpoint)).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    md,
                    "| {} | {bp} | {} | {} | {} |",
                    law_name(s.metric),
                    g(sel.f_statistic),
                    g(sel.p_value),
                    choice_name(sel.choice)
                );
            }
            None => {
                let _ = writeln!(md, "| {} | - | - | - | insufficient spacings |", law_name(s.metric));
            }
        }
    }
    if !d.warnings.is_empty() {
        let _ = writeln!(md, "\n## Warnings\n");
        for w in &d.warnings {
            let _ = writeln!(md, "- {w}");
        }
    }
    let _ = writeln!(md, "\n## Figures\n");
    for f in FIGURES {
        let _ = writeln!(md, "![{}]({f})", f.trim_end_matches(".svg"));
    }
    let _ = writeln!(md, "\nFit records: [fits.json](fits.json)");
    md
}

fn fit_lines(sel: &ModelSelection, xs: &[f64]) -> Vec<Vec<(f64, f64)>> {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    match (sel.choice, &sel.piecewise) {
        (ModelChoice::TwoSegment, Some(p)) => {
            let (l_hi, r_lo) = (xs[p.split_index - 1], xs[p.split_index]);
            vec![
                vec![(lo, p.left.predict(lo)), (l_hi, p.left.predict(l_hi))],
                vec![(r_lo, p.right.predict(r_lo)), (hi, p.right.predict(hi))],
            ]
        }
        _ => vec![vec![(lo, sel.linear.predict(lo)), (hi, sel.linear.predict(hi))]],
    }
}

pub fn render_figures(d: &ReportData) -> Result<Vec<(&'static str, String)>, ReportError> {
    let pts = |s: &MetricSummary| s.optima.iter().map(|o| (o.spacing, o.x_star)).collect::<Vec<_>>();
    let (pd, pt) = (pts(&d.delta_star), pts(&d.theta));
    let xs: Vec<f64> = pd.iter().map(|p| p.0).collect();
    let mut lines: Vec<(Vec<(f64, f64)>, &str)> = Vec::new();
    for (s, color) in [(&d.delta_star, "#1f77b4"), (&d.theta, "#d62728")] {
        if let Some(sel) = &s.selection {
            lines.extend(fit_lines(sel, &xs).into_iter().map(|l| (l, color)));
        }
    }
    let mut series = vec![
        Series { name: "x*_delta_star (min)", points: &pd, color: "#1f77b4", markers: true, dashed: false },
        Series { name: "x*_theta (max)", points: &pt, color: "#d62728", markers: true, dashed: false },
    ];
    for (l, color) in &lines {
        series.push(Series { name: "fit", points: l, color, markers: false, dashed: true });
    }
    let scaling = line_chart("Optimal probe station vs spacing", "S/D", "x*/D", &series)?;
    let heat = |g: &LandscapeGrid, title: &str| heatmap(title, "x_p/D", "S/D", &g.stations, &g.spacings, &g.values);
    let land_d = heat(&d.landscapes[0], "delta_star landscape (D)")?;
    let land_t = heat(&d.landscapes[1], "theta landscape (D)")?;
    let div: Vec<(f64, f64)> = d.divergence.iter().map(|r| (r.spacing, r.abs_divergence)).collect();
    let divergence = line_chart(
        "Divergence of optimal stations",
        "S/D",
        "|x*_theta - x*_delta_star|/D",
        &[Series { name: "abs_dx*", points: &div, color: "#2ca02c", markers: true, dashed: false }],
    )?;
    Ok(vec![(FIGURES[0], scaling), (FIGURES[1], land_d), (FIGURES[2], land_t), (FIGURES[3], divergence)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportArtifacts {
    pub markdown: PathBuf,
    pub fits: PathBuf,
    pub figures: Vec<PathBuf>,
}

pub fn generate_report(csv: &Path, out_dir: &Path, tolerance: f64) -> Result<ReportArtifacts, ReportError> {
    let rows = read_rows(csv)?;
    let data = analyze(&rows, tolerance)?;
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let write = |file: &str, text: &str| -> Result<PathBuf, ReportError> {
        let path = out_dir.join(file);
        fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        Ok(path)
    };
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io { path: out_dir.into(), source })?;
    let figures = render_figures(&data)?
        .into_iter()
        .map(|(f, svg)| write(f, &svg))
        .collect::<Result<Vec<_>, _>>()?;
    let fits = serde_json::to_string_pretty(&data).expect("report data serializes") + "\n";
    Ok(ReportArtifacts {
        fits: write("fits.json", &fits)?,
        markdown: write("report.md", &render_markdown(&data, &name))?,
        figures,
    })
}
