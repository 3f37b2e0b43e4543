//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wakeprobe_core::discovery::{best_per_spacing, landscape_grid, select_model, EvidenceRow, DEFAULT_ALPHA};
use wakeprobe_core::field::DEFAULT_GEOMETRY_TOLERANCE;
use wakeprobe_core::metrics::{MetricMode, PrimaryMetric};

use crate::agents::{CampaignConfig, LlmSpec};
use crate::campaign::Campaign;
use crate::evidence::{read_rows, HEADER};
use crate::lab;
use crate::llm::ChatSettings;
use crate::report::{generate_report, MIN_SEGMENT};
use crate::surrogate::Backend;
use crate::svg::heatmap;

#[derive(Debug, Parser)]
#[command(name = "wakeprobe", version, about = "Probe-placement campaigns for tandem-cylinder wakes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    DeltaStar,
    Theta,
}

impl From<MetricArg> for PrimaryMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::DeltaStar => PrimaryMetric::DeltaStar,
            MetricArg::Theta => PrimaryMetric::Theta,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SurrogateArg {
    Analytic,
    Replay,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LlmArg {
    Scripted,
    Remote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run (or resume) an exploration campaign.
    Campaign {
        /// JSON campaign configuration; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long, value_enum)]
        surrogate: Option<SurrogateArg>,
        #[arg(long, value_enum)]
        llm: Option<LlmArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_iterations: Option<u32>,
        #[arg(long)]
        replay_path: Option<PathBuf>,
        #[arg(long)]
        surrogate_url: Option<String>,
        #[arg(long)]
        llm_model: Option<String>,
    },
    /// Fit single and two-segment laws to optimal stations.
    Fit {
        /// A results CSV, or a two-column CSV of (S, x*) points.
        #[arg(long)]
        csv: PathBuf,
        /// Metric whose optima are fitted when reading a results CSV.
        #[arg(long, value_enum, default_value = "delta-star")]
        metric: MetricArg,
        #[arg(long, default_value_t = MIN_SEGMENT)]
        min_segment: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_GEOMETRY_TOLERANCE)]
        tolerance: f64,
    },
    /// Metric landscape over (S, x_p) as JSON, optionally as an SVG heatmap.
    Landscape {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GEOMETRY_TOLERANCE)]
        tolerance: f64,
    },
    /// Write report.md, fits.json and figures from a results CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GEOMETRY_TOLERANCE)]
        tolerance: f64,
    },
    /// Latent-model diagnostics.
    Lab {
        #[command(subcommand)]
        check: LabCommand,
    },
}

#[derive(Debug, Subcommand)]
enum LabCommand {
    /// Total-correlation estimator on factorized and correlated aggregates.
    TcCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = lab::TC_SAMPLES)]
        n_mc: usize,
    },
    /// Analytic gradients against central differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a Gaussian mixture and compare sample moments.
    EdmTrain {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train on linear-Gaussian dynamics and roll out.
    Rollout {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
}

/// Entry point for the binary: parses `argv`, runs, returns the exit code.
pub fn parse_and_dispatch<I, T>(argv: I, env: &HashMap<String, String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(argv, env, &mut io::stdout().lock(), &mut io::stderr().lock())
}

/// [`parse_and_dispatch`] with explicit output streams.
pub fn run<I, T>(argv: I, env: &HashMap<String, String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, env, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn dispatch(cmd: Command, env: &HashMap<String, String>, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Campaign {
            config,
            metric,
            surrogate,
            llm,
            seed,
            out: out_dir,
            max_iterations,
            replay_path,
            surrogate_url,
            llm_model,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<CampaignConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => CampaignConfig::default(),
            };
            if let Some(m) = metric {
                cfg.metric = m.into();
            }
            if let Some(s) = surrogate {
                cfg.surrogate.backend = match s {
                    SurrogateArg::Analytic => Backend::Analytic,
                    SurrogateArg::Replay => Backend::Replay,
                    SurrogateArg::Remote => Backend::Remote,
                };
            }
            if let Some(p) = replay_path {
                cfg.surrogate.replay_path = Some(p);
            }
            if let Some(u) = surrogate_url {
                cfg.surrogate.remote_endpoint = Some(u);
            }
            match llm {
                Some(LlmArg::Scripted) => cfg.llm = LlmSpec::Scripted,
                Some(LlmArg::Remote) if !matches!(cfg.llm, LlmSpec::Remote(_)) => {
                    cfg.llm = LlmSpec::Remote(ChatSettings::default())
                }
                _ => {}
            }
            if let (Some(model), LlmSpec::Remote(s)) = (llm_model, &mut cfg.llm) {
                s.model = model;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out_dir {
                cfg.out_dir = o;
            }
            if let Some(n) = max_iterations {
                cfg.max_iterations = n;
            }
            let mut campaign = Campaign::from_config(cfg, env)?;
            let outcome = campaign.run()?;
            print_json(
                out,
                &serde_json::json!({
                    "iterations": outcome.iterations,
                    "csv": outcome.csv,
                    "report": outcome.report.markdown,
                    "fits": outcome.report.fits,
                    "figures": outcome.report.figures,
                    "verdict": outcome.verdict,
                }),
            )
        }
        Command::Fit { csv, metric, min_segment, alpha, tolerance } => {
            let points = fit_points(&csv, metric.into(), tolerance)?;
            let sel = select_model(&points, min_segment, alpha)?;
            print_json(out, &sel)
        }
        Command::Landscape { csv, metric, svg, tolerance } => {
            let rows: Vec<EvidenceRow> = read_rows(&csv)?.iter().map(|r| r.evidence(tolerance)).collect();
            let metric: PrimaryMetric = metric.into();
            let grid = landscape_grid(&rows, metric)?;
            if let Some(path) = svg {
                let title = match metric {
                    PrimaryMetric::DeltaStar => "delta_star landscape (D)",
                    PrimaryMetric::Theta => "theta landscape (D)",
                };
                let text = heatmap(title, "x_p/D", "S/D", &grid.stations, &grid.spacings, &grid.values)?;
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(out, &grid)
        }
        Command::Report { csv, out: dir, tolerance } => {
            let a = generate_report(&csv, &dir, tolerance)?;
            print_json(out, &serde_json::json!({"report": a.markdown, "fits": a.fits, "figures": a.figures}))
        }
        Command::Lab { check } => match check {
            LabCommand::TcCheck { seed, n_mc } => lab_result(out, lab::tc_check(seed, n_mc)?, |r| r.pass),
            LabCommand::GradCheck { seed } => lab_result(out, lab::grad_check(seed)?, |r| r.pass),
            LabCommand::EdmTrain { seed } => lab_result(out, lab::edm_train(seed)?, |r| r.pass),
            LabCommand::Rollout { seed, steps } => lab_result(out, lab::rollout_check(seed, steps)?, |r| r.pass),
        },
    }
}

fn lab_result<T: Serialize>(out: &mut dyn Write, r: T, pass: impl Fn(&T) -> bool) -> Result<()> {
    print_json(out, &r)?;
    if !pass(&r) {
        bail!("check failed");
    }
    Ok(())
}

/// `(S, x*)` points from either a results CSV (best station per valid
/// spacing) or a plain two-column CSV with a header row.
fn fit_points(path: &Path, metric: PrimaryMetric, tolerance: f64) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().eq(HEADER) {
        let rows: Vec<EvidenceRow> = read_rows(path)?.iter().map(|r| r.evidence(tolerance)).collect();
        let optima = best_per_spacing(&rows, &MetricMode::for_metric(metric))?;
        return Ok(optima.iter().map(|o| (o.spacing, o.x_star)).collect());
    }
    if headers.len() != 2 {
        bail!("{}: expected the results header or two columns, found {} columns", path.display(), headers.len());
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec[k].trim().parse().with_context(|| format!("{} line {}: bad number {:?}", path.display(), i + 2, &rec[k]))
        };
        points.push((parse(0)?, parse(1)?));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(args.iter().copied(), &HashMap::new(), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn help_exits_zero_and_bad_flags_exit_two() {
        let (code, out, _) = run_capture(&["wakeprobe", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("campaign"));
        let (code, _, err) = run_capture(&["wakeprobe", "fit"]);
        assert_eq!(code, 2);
        assert!(err.contains("--csv"));
        let (code, _, _) = run_capture(&["wakeprobe", "campaign", "--metric", "pressure"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_file_is_a_runtime_error() {
        let (code, _, err) = run_capture(&["wakeprobe", "report", "--csv", "/nonexistent/x.csv", "--out", "/tmp/none"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn fit_reads_two_column_points() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        let xs = [3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.4];
        let ys = [2.15, 3.05, 4.10, 5.45, 6.35, 7.25, 8.00];
        let mut text = String::from("S,x_star\n");
        for (x, y) in xs.iter().zip(ys) {
            text.push_str(&format!("{x},{y}\n"));
        }
        fs::write(&p, text).unwrap();
        let (code, out, err) = run_capture(&["wakeprobe", "fit", "--csv", p.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["choice"], "single");
        assert!((v["linear"]["slope"].as_f64().unwrap() - 1.0186333785051598).abs() < 1e-12);
    }
}
