use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde_json::Value;
use wakeprobe::agents::{CampaignConfig, LlmSpec, VerdictStatus};
use wakeprobe::campaign::{Campaign, CampaignError, RunStatus, CSV_FILE, LOG_FILE};
use wakeprobe::evidence::read_rows;
use wakeprobe::llm::{CannedChat, ChatBackend, ChatSettings, BASE_URL_ENV};
use wakeprobe::stub::{chat_handler, StubServer};
use wakeprobe::surrogate::{AnalyticGenerator, CorruptSpec, CorruptingSurrogate, FlowGenerator, GenerateError};
use wakeprobe_core::field::FlowSnapshot;
use wakeprobe_core::metrics::ProfileSource;

fn config(dir: &Path, seed: u64) -> CampaignConfig {
    CampaignConfig { seed, out_dir: dir.to_path_buf(), ..CampaignConfig::default() }
}

fn scripted(cfg: CampaignConfig, gen: Box<dyn FlowGenerator>) -> Campaign {
    Campaign::with_backends(cfg, gen, None, None).unwrap()
}

fn log_events(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join(LOG_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn identical_configs_give_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        scripted(config(d.path(), 5), Box::new(AnalyticGenerator::default())).run().unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(CSV_FILE)).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(std::fs::read(a.path().join("report.md")).unwrap(), std::fs::read(b.path().join("report.md")).unwrap());
    let c = tempfile::tempdir().unwrap();
    scripted(config(c.path(), 6), Box::new(AnalyticGenerator::default())).run().unwrap();
    assert_ne!(read(&a), std::fs::read(c.path().join(CSV_FILE)).unwrap());
}

#[test]
fn completed_directory_is_not_rerun() {
    let d = tempfile::tempdir().unwrap();
    scripted(config(d.path(), 1), Box::new(AnalyticGenerator::default())).run().unwrap();
    let again = Campaign::with_backends(config(d.path(), 1), Box::new(AnalyticGenerator::default()), None, None);
    assert!(matches!(again, Err(CampaignError::AlreadyCompleted(_))));
}

#[test]
fn corrupted_window_is_retried_and_covered() {
    let d = tempfile::tempdir().unwrap();
    let spec = CorruptSpec { lo: 5.5, hi: 6.5, shift: 0.6, count: 1 };
    let gen = CorruptingSurrogate::new(AnalyticGenerator::default(), spec);
    let out = scripted(config(d.path(), 2), Box::new(gen)).run().unwrap();
    assert_eq!(out.iterations, 2);
    let rows = read_rows(&d.path().join(CSV_FILE)).unwrap();
    let bad: Vec<_> = rows.iter().filter(|r| !r.geom_valid).collect();
    assert!(!bad.is_empty());
    assert!(bad.iter().all(|r| r.iteration == 1 && (5.5..6.5).contains(&r.spacing)));
    assert!(rows.iter().any(|r| r.iteration == 2 && r.geom_valid && (5.5..6.5).contains(&r.spacing)));
    let verdicts: Vec<Value> = log_events(d.path()).into_iter().filter(|e| e["event"] == "verdict").collect();
    assert_eq!(verdicts[0]["detail"]["verdict"]["status"], "needs_refinement");
    assert_eq!(verdicts[0]["detail"]["verdict"]["refinements"][0]["window"], "[5.5, 6.5)");
    assert_eq!(verdicts[1]["detail"]["verdict"]["status"], "solved");
}

#[test]
fn persistent_corruption_exhausts_the_window() {
    let d = tempfile::tempdir().unwrap();
    let spec = CorruptSpec { lo: 8.5, hi: 9.5, shift: 0.6, count: 100 };
    let gen = CorruptingSurrogate::new(AnalyticGenerator::default(), spec);
    let out = scripted(config(d.path(), 2), Box::new(gen)).run().unwrap();
    // two failed attempts exhaust the window, after which coverage is complete
    assert_eq!(out.iterations, 2);
    let report = std::fs::read_to_string(&out.report.markdown).unwrap();
    assert!(report.contains("over 8 spacings, 6 geometrically valid"), "{report}");
}

/// Fails with a transport-style error for spacings at or above `cutoff`
/// until `heal` is set.
struct Flaky {
    inner: AnalyticGenerator,
    cutoff: f64,
    healed: Mutex<bool>,
}

impl FlowGenerator for Flaky {
    fn generate(&self, spacing: f64, n: usize, seed: u64) -> Result<Vec<FlowSnapshot>, GenerateError> {
        if spacing >= self.cutoff && !*self.healed.lock().unwrap() {
            return Err(GenerateError::Unavailable("connection refused".into()));
        }
        self.inner.generate(spacing, n, seed)
    }
    fn profile_source(&self, spacing: f64) -> Option<Box<dyn ProfileSource + '_>> {
        self.inner.profile_source(spacing)
    }
    fn spacing_range(&self) -> (f64, f64) {
        self.inner.spacing_range()
    }
}

#[test]
fn unavailable_surrogate_aborts_and_resume_finishes() {
    let d = tempfile::tempdir().unwrap();
    let flaky = Flaky { inner: AnalyticGenerator::default(), cutoff: 7.5, healed: Mutex::new(false) };
    let mut c = scripted(config(d.path(), 3), Box::new(flaky));
    assert!(matches!(c.run(), Err(CampaignError::Agent(_))));
    assert_eq!(c.state().status, RunStatus::Aborted);
    let partial = read_rows(&d.path().join(CSV_FILE)).unwrap();
    assert!(!partial.is_empty() && partial.iter().all(|r| r.spacing < 7.5));

    let mut mismatched = config(d.path(), 4);
    mismatched.max_iterations = 3;
    assert!(matches!(
        Campaign::with_backends(mismatched, Box::new(AnalyticGenerator::default()), None, None),
        Err(CampaignError::ConfigMismatch { field: "seed", .. })
    ));

    let out = scripted(config(d.path(), 3), Box::new(AnalyticGenerator::default())).run().unwrap();
    let rows = read_rows(&out.csv).unwrap();
    assert_eq!(&rows[..partial.len()], &partial[..]);
    let mut spacings: Vec<f64> = rows.iter().map(|r| r.spacing).collect();
    spacings.dedup();
    assert_eq!(spacings.len(), 7);
    assert!(log_events(d.path()).iter().any(|e| e["event"] == "aborted"));

    // a fresh, uninterrupted run reaches the same spacings
    let e = tempfile::tempdir().unwrap();
    let fresh = scripted(config(e.path(), 3), Box::new(AnalyticGenerator::default())).run().unwrap();
    let mut want: Vec<f64> = read_rows(&fresh.csv).unwrap().iter().map(|r| r.spacing).collect();
    want.dedup();
    let mut got = spacings.clone();
    got.sort_by(f64::total_cmp);
    assert_eq!(got, want);
}

fn canned(replies: &[&str]) -> Option<Box<dyn ChatBackend>> {
    Some(Box::new(CannedChat::new(replies.iter().copied())))
}

#[test]
fn remote_planner_suggestions_are_filtered_and_used() {
    let d = tempfile::tempdir().unwrap();
    let plan = r#"Sure. ```json
{"suggested_ds": [3.71, 4.6, 5.55, 6.9, 7.5, 8.9, 9.8, 12.0, 3.71], "done": false}
```"#;
    let critic = r#"{"action": "final", "status": "solved", "best_claims": [], "notes": "looks complete"}"#;
    let mut c = Campaign::with_backends(config(d.path(), 1), Box::new(AnalyticGenerator::default()), canned(&[plan]), canned(&[critic]))
        .unwrap();
    let out = c.run().unwrap();
    assert_eq!(out.iterations, 1);
    let mut spacings: Vec<f64> = read_rows(&out.csv).unwrap().iter().map(|r| r.spacing).collect();
    spacings.dedup();
    assert_eq!(spacings, vec![3.71, 4.6, 5.55, 6.9, 7.5, 8.9, 9.8]);
    assert_eq!(out.verdict.unwrap().advisory, vec!["looks complete".to_string()]);
}

#[test]
fn unparseable_planner_falls_back_to_script() {
    let d = tempfile::tempdir().unwrap();
    let critic = r#"{"action": "final", "status": "solved"}"#;
    let planner = canned(&["no idea", "still prose", "{\"suggested\": 4}"]);
    let out = Campaign::with_backends(config(d.path(), 1), Box::new(AnalyticGenerator::default()), planner, canned(&[critic]))
        .unwrap()
        .run()
        .unwrap();
    let events = log_events(d.path());
    assert_eq!(events.iter().filter(|e| e["event"] == "parse_failure").count(), 3);
    assert!(events.iter().any(|e| e["event"] == "warning" && e["detail"]["fallback"] == "scripted"));
    let scripted_dir = tempfile::tempdir().unwrap();
    let s = scripted(config(scripted_dir.path(), 1), Box::new(AnalyticGenerator::default())).run().unwrap();
    assert_eq!(std::fs::read(out.csv).unwrap(), std::fs::read(s.csv).unwrap());
}

#[test]
fn critic_tool_calls_and_grounded_claims() {
    let d = tempfile::tempdir().unwrap();
    // run once to learn the CSV's true best station at one spacing
    let probe = tempfile::tempdir().unwrap();
    let out = scripted(config(probe.path(), 1), Box::new(AnalyticGenerator::default())).run().unwrap();
    let rows = read_rows(&out.csv).unwrap();
    let s = rows[0].spacing;
    let best = rows
        .iter()
        .filter(|r| r.spacing == s)
        .min_by(|a, b| a.delta_star.total_cmp(&b.delta_star))
        .unwrap();
    let grounded = format!(
        r#"{{"action": "final", "status": "solved", "best_claims": [{{"spacing": {}, "x_p": {}, "value": {}}}]}}"#,
        best.spacing, best.x_p, best.delta_star
    );
    let critic = canned(&[r#"{"action": "read_csv_file"}"#, &grounded]);
    let out = Campaign::with_backends(config(d.path(), 1), Box::new(AnalyticGenerator::default()), None, critic)
        .unwrap()
        .run()
        .unwrap();
    let v = out.verdict.unwrap();
    assert_eq!(v.status, VerdictStatus::Solved);
    assert!(v.grounding_violations.is_empty());
    assert!(log_events(d.path()).iter().any(|e| e["event"] == "tool_call"));
}

#[test]
fn fabricated_claim_forces_refinement() {
    let d = tempfile::tempdir().unwrap();
    let lie = r#"{"action": "final", "status": "solved", "best_claims": [{"spacing": 4.02, "x_p": 1.7, "value": 0.01}]}"#;
    let truth = r#"{"action": "final", "status": "solved"}"#;
    let mut cfg = config(d.path(), 7);
    cfg.max_iterations = 3;
    let out = Campaign::with_backends(cfg, Box::new(AnalyticGenerator::default()), None, canned(&[lie, truth]))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(out.iterations, 2);
    let verdicts: Vec<Value> = log_events(d.path()).into_iter().filter(|e| e["event"] == "verdict").collect();
    assert_eq!(verdicts[0]["detail"]["verdict"]["status"], "needs_refinement");
    assert!(!verdicts[0]["detail"]["verdict"]["grounding_violations"].as_array().unwrap().is_empty());
}

#[test]
fn silent_llm_aborts_the_campaign() {
    let d = tempfile::tempdir().unwrap();
    let mut c = Campaign::with_backends(config(d.path(), 1), Box::new(AnalyticGenerator::default()), canned(&[]), None).unwrap();
    assert!(matches!(c.run(), Err(CampaignError::Agent(_))));
    assert_eq!(c.state().status, RunStatus::Aborted);
    assert!(!d.path().join(CSV_FILE).exists());
}

#[test]
fn remote_backends_over_http() {
    let d = tempfile::tempdir().unwrap();
    let plan = r#"{"suggested_ds": [3.9, 4.9, 5.9, 6.9, 7.9, 8.9, 9.9], "done": false}"#;
    let fin = r#"{"action": "final", "status": "solved", "best_claims": []}"#;
    let server = StubServer::start(chat_handler(vec![plan.into(), fin.into()])).unwrap();
    let mut cfg = config(d.path(), 1);
    cfg.llm = LlmSpec::Remote(ChatSettings::default());
    let env = HashMap::from([(BASE_URL_ENV.to_string(), server.url())]);
    let out = Campaign::from_config(cfg, &env).unwrap().run().unwrap();
    assert_eq!(out.iterations, 1);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    for r in &reqs {
        assert_eq!(r.json()["temperature"], serde_json::json!(0.35));
        assert_eq!(r.json()["max_tokens"], serde_json::json!(1024));
    }
}
