//! Self-contained SVG charts with deterministic output.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SvgError {
    #[error("nothing to plot")]
    Empty,
    #[error("grid shape mismatch: {0}")]
    Shape(String),
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const ABSENT_FILL: &str = "#d9d9d9";

#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
    pub color: &'a str,
    pub markers: bool,
    pub dashed: bool,
}

struct Axis {
    lo: f64,
    hi: f64,
    ticks: Vec<f64>,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let step = nice_step((hi - lo) / 5.0);
        let lo = (lo / step).floor() * step;
        let hi = (hi / step).ceil() * step;
        let n = ((hi - lo) / step).round() as usize;
        let ticks = (0..=n).map(|k| lo + k as f64 * step).collect();
        Some(Self { lo, hi, ticks })
    }

    fn map(&self, v: f64, a: f64, b: f64) -> f64 {
        a + (v - self.lo) / (self.hi - self.lo) * (b - a)
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, escape(title));
}

fn axes(out: &mut String, x: &Axis, y: &Axis, x_label: &str, y_label: &str, right: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - right, H - BOTTOM, TOP);
    let _ = writeln!(out, "<g stroke=\"black\" fill=\"none\"><rect x=\"{x0}\" y=\"{y1}\" width=\"{:.2}\" height=\"{:.2}\"/></g>", x1 - x0, y0 - y1);
    for &t in &x.ticks {
        let px = x.map(t, x0, x1);
        let _ = writeln!(out, "<line x1=\"{px:.2}\" y1=\"{y0}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", y0 + 5.0);
        let _ = writeln!(out, "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", y0 + 19.0, tick_label(t));
    }
    for &t in &y.ticks {
        let py = y.map(t, y0, y1);
        let _ = writeln!(out, "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0}\" y2=\"{py:.2}\" stroke=\"black\"/>", x0 - 5.0);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", x0 - 8.0, py + 4.0, tick_label(t));
    }
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, H - 14.0, escape(x_label));
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Scatter/line chart of one or more series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String, SvgError> {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let x = Axis::new(all().map(|p| p.0)).ok_or(SvgError::Empty)?;
    let y = Axis::new(all().map(|p| p.1)).ok_or(SvgError::Empty)?;
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &x, &y, x_label, y_label, RIGHT);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(a, b)| (x.map(a, x0, x1), y.map(b, y0, y1)))
            .collect();
        let _ = writeln!(out, "<g class=\"series\" data-name=\"{}\">", escape(s.name));
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash}/>", path.join(" "), s.color);
        }
        if s.markers {
            for (a, b) in &pts {
                let _ = writeln!(out, "<circle cx=\"{a:.2}\" cy=\"{b:.2}\" r=\"3.5\" fill=\"{}\"/>", s.color);
            }
        }
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(out, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>", LEFT + 10.0, ly - 9.0, s.color);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{ly:.2}\">{}</text>", LEFT + 25.0, escape(s.name));
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Five-stop perceptual ramp (dark blue to yellow).
fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let k = (t.floor() as usize).min(3);
    let f = t - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let c = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Cell extents around sorted centres: midpoints between neighbours, the
/// outer cells mirrored.
fn cell_edges(c: &[f64]) -> Vec<(f64, f64)> {
    if c.len() == 1 {
        return vec![(c[0] - 0.5, c[0] + 0.5)];
    }
    let mids: Vec<f64> = c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let n = c.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { 2.0 * c[0] - mids[0] } else { mids[i - 1] };
            let hi = if i + 1 == n { 2.0 * c[n - 1] - mids[n - 2] } else { mids[i] };
            (lo, hi)
        })
        .collect()
}

/// Heat map with `values[row][col]` at `(xs[col], ys[row])`; `None` cells
/// get a neutral grey.
pub fn heatmap(
    title: &str,
    x_label: &str,
    y_label: &str,
    xs: &[f64],
    ys: &[f64],
    values: &[Vec<Option<f64>>],
) -> Result<String, SvgError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(SvgError::Empty);
    }
    if values.len() != ys.len() || values.iter().any(|r| r.len() != xs.len()) {
        return Err(SvgError::Shape(format!("{} rows for {} spacings × {} stations", values.len(), ys.len(), xs.len())));
    }
    let present = || values.iter().flatten().flatten().copied().filter(|v| v.is_finite());
    let lo = present().fold(f64::INFINITY, f64::min);
    let hi = present().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Err(SvgError::Empty);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (xe, ye) = (cell_edges(xs), cell_edges(ys));
    let x = Axis::new([xe[0].0, xe[xe.len() - 1].1].into_iter()).ok_or(SvgError::Empty)?;
    let y = Axis::new([ye[0].0, ye[ye.len() - 1].1].into_iter()).ok_or(SvgError::Empty)?;
    let right = RIGHT + 60.0;
    let (x0, x1, y0, y1) = (LEFT, W - right, H - BOTTOM, TOP);
    let mut out = String::new();
    open(&mut out, title);
    out.push_str("<g class=\"cells\">\n");
    for (j, row) in values.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let (ax, bx) = (x.map(xe[i].0, x0, x1), x.map(xe[i].1, x0, x1));
            let (ay, by) = (y.map(ye[j].1, y0, y1), y.map(ye[j].0, y0, y1));
            let fill = match v {
                Some(v) if v.is_finite() => ramp((v - lo) / span),
                _ => ABSENT_FILL.to_string(),
            };
            let _ = writeln!(out, "<rect x=\"{ax:.2}\" y=\"{ay:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>", bx - ax, by - ay);
        }
    }
    out.push_str("</g>\n");
    axes(&mut out, &x, &y, x_label, y_label, right);
    // colour bar
    let bx = W - right + 15.0;
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let py = y0 - t * (y0 - y1);
        let _ = writeln!(out, "<rect x=\"{bx:.2}\" y=\"{:.2}\" width=\"14\" height=\"{:.2}\" fill=\"{}\"/>", py - (y0 - y1) / 50.0, (y0 - y1) / 50.0 + 0.5, ramp(t));
    }
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", bx + 18.0, y1 + 4.0, tick_label(hi));
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", bx + 18.0, y0 + 4.0, tick_label(lo));
    out.push_str("</svg>\n");
    Ok(out)
}
