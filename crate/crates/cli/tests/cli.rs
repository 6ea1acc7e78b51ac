use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use pollsmc_core::io::schedule_doc::PollEntry;
use pollsmc_core::io::{load_polls, load_spec, read_draws, RunReport, ScheduleDoc};
use serde_json::{json, Value};
use tower::ServiceExt;

fn pollsmc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pollsmc"))
        .args(args)
        .env("POLLSMC_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) {
    let o = pollsmc(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// The structured error on stderr and the exit code.
fn failure(out: &Path, args: &[&str]) -> (i32, Value) {
    let o = pollsmc(out, args);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("{stderr}"));
    (o.status.code().unwrap(), serde_json::from_str(line).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(path: &Path) -> RunReport {
    RunReport::from_json(&std::fs::read_to_string(path).unwrap(), "report").unwrap()
}

/// Desk instance plus a full-length baseline fit, shared by the tests.
fn desk() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        ok(&dir, &["generate", "--seed", "1"]);
        let (spec, polls) = (dir.join("spec.kv"), dir.join("polls.csv"));
        ok(&dir, &["fit-baseline", "--spec", s(&spec), "--polls", s(&polls), "--iters", "1200", "--burnin", "200", "--seed", "3"]);
        dir
    })
}

fn run_args<'a>(desk: &'a Path, schedule: &'a Path) -> Vec<String> {
    [
        "--spec",
        s(&desk.join("spec.kv")),
        "--polls",
        s(&desk.join("polls.csv")),
        "--baseline",
        s(&desk.join("draws.csv")),
        "--schedule",
        s(schedule),
    ]
    .iter()
    .map(|a| a.to_string())
    .collect()
}

fn with<'a>(head: &'a [&'a str], rest: &'a [String], tail: &'a [&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(rest.iter().map(String::as_str)).chain(tail.iter().copied()).collect()
}

#[test]
fn generate_is_reproducible_and_writes_the_presets() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["generate", "--seed", "5"]);
    ok(b.path(), &["generate", "--seed", "5"]);
    for f in ["spec.kv", "polls.csv", "arrivals.csv", "truth.json", "presets/hypothetical-poll.kv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read_dir(a.path().join("presets")).unwrap().count(), 9);
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["generate", "--seed", "6"]);
    assert_ne!(std::fs::read(a.path().join("polls.csv")).unwrap(), std::fs::read(c.path().join("polls.csv")).unwrap());
}

#[test]
fn generate_from_a_spec_and_an_empty_plan_gives_no_polls() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"{"entries": []}"#).unwrap();
    let spec = desk().join("spec.kv");
    ok(dir.path(), &["generate", "--spec", s(&spec), "--plan", s(&plan), "--seed", "2"]);
    let polls = std::fs::read_to_string(dir.path().join("polls.csv")).unwrap();
    assert_eq!(polls.lines().count(), 1, "{polls}");
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["mu"].as_array().unwrap().len(), 60);
}

#[test]
fn fit_baseline_keeps_one_thousand_draws() {
    let dir = desk();
    let draws = read_draws(&std::fs::read_to_string(dir.join("draws.csv")).unwrap(), "draws").unwrap();
    assert_eq!(draws.particles.len(), 1000);
    let r = report(&dir.join("report.json"));
    assert_eq!(r.records.len(), 0);
    assert_eq!(r.particles, 1000);
    assert!(r.forecast.is_some());
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["draws"], 1000);
}

#[test]
fn identity_run_reports_no_rejuvenation() {
    let out = tempfile::tempdir().unwrap();
    let schedule = out.path().join("empty.kv");
    std::fs::write(&schedule, "").unwrap();
    let args = run_args(desk(), &schedule);
    ok(out.path(), &with(&["run-scenario"], &args, &["--mesh", "5", "--snapshot", "2"]));
    let r = report(&out.path().join("report.json"));
    assert_eq!(r.records.len(), 5);
    assert_eq!(r.diagnostics.rejuvenations, 0);
    assert_eq!(r.timing.per_step.len(), 5);
    for f in ["draws.csv", "knob.json", "summary.txt", "snapshots/2.csv", "snapshots/2.knob.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
}

#[test]
fn continuation_starts_from_the_reached_configuration() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let doc = first.path().join("scale.kv");
    std::fs::write(&doc, "family: prior_scale\na_max: 1.25\nmesh: 4\n").unwrap();
    ok(first.path(), &with(&["run-scenario"], &run_args(desk(), &doc), &[]));
    let d = desk();
    let (draws, knob) = (first.path().join("draws.csv"), first.path().join("knob.json"));
    ok(
        second.path(),
        &[
            "run-scenario", "--spec", s(&d.join("spec.kv")), "--polls", s(&d.join("polls.csv")), "--baseline", s(&draws),
            "--after", s(&knob), "--schedule", s(&doc),
        ],
    );
    let k1: Value = serde_json::from_str(&std::fs::read_to_string(&knob).unwrap()).unwrap();
    let k2: Value = serde_json::from_str(&std::fs::read_to_string(second.path().join("knob.json")).unwrap()).unwrap();
    assert_ne!(k1, k2);
    // The second run's terminal knob scales the prior by 1.25 twice.
    let scale = k2.to_string();
    assert!(scale.contains("1.5625"), "{scale}");
}

#[test]
fn errors_are_structured_with_hints() {
    let out = tempfile::tempdir().unwrap();
    let d = desk();
    let (code, e) = failure(
        out.path(),
        &["run-scenario", "--spec", s(&d.join("spec.kv")), "--polls", s(&d.join("polls.csv")), "--schedule", "x.kv"],
    );
    assert_eq!(code, 2);
    assert_eq!(e["error"]["kind"], "usage");
    assert!(e["error"]["hint"].as_str().unwrap().contains("fit-baseline"));

    let (code, e) = failure(out.path(), &["run-scenario", "--bogus"]);
    assert_eq!(code, 2);
    assert_eq!(e["error"]["kind"], "usage");

    let bad = out.path().join("bad.kv");
    std::fs::write(&bad, "family: prior_scale\na_max: big\n").unwrap();
    let (code, e) = failure(out.path(), &with(&["run-scenario"], &run_args(d, &bad), &[]));
    assert_eq!(code, 1);
    assert_eq!(e["error"]["kind"], "schema");
    assert_eq!(e["error"]["field"], "a_max");
    assert!(e["error"]["message"].as_str().unwrap().contains("bad.kv:2"), "{e}");

    let (code, e) = failure(out.path(), &["fit-baseline", "--spec", "missing.kv", "--polls", "missing.csv"]);
    assert_eq!(code, 1);
    assert_eq!(e["error"]["kind"], "io");

    let (code, _) = failure(out.path(), &with(&["run-scenario"], &run_args(d, &bad), &["--ess-frac", "1.5"]));
    assert_eq!(code, 1);
}

#[test]
fn backtest_writes_comparison_and_timing_tables() {
    let out = tempfile::tempdir().unwrap();
    let doc = out.path().join("rw.kv");
    std::fs::write(&doc, "family: rw_scale\na_max: 1.25\nmesh: 3\n").unwrap();
    ok(
        out.path(),
        &with(&["backtest-compare"], &run_args(desk(), &doc), &["--chains", "2", "--iters", "500", "--burnin", "200", "--threads", "2"]),
    );
    let comparison = std::fs::read_to_string(out.path().join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("name,"));
    let timing = std::fs::read_to_string(out.path().join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 4);
    let r = report(&out.path().join("report.json"));
    assert_eq!(r.records.len(), 3);
    assert_eq!(r.timing.threads, 2);
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn service_job_reproduces_the_cli_report() {
    let out = tempfile::tempdir().unwrap();
    let d = desk();
    let doc = out.path().join("loc.kv");
    std::fs::write(&doc, "family: prior_location\nstate: Ohio\na_max: -0.2\nmesh: 5\n").unwrap();
    let args = run_args(d, &doc);
    ok(out.path(), &with(&["run-scenario"], &args, &["--seed", "9", "--sweeps", "2"]));
    let cli = report(&out.path().join("report.json"));

    let spec = load_spec(&d.join("spec.kv")).unwrap();
    let polls = load_polls(&d.join("polls.csv"), &spec).unwrap();
    let draws = std::fs::read_to_string(d.join("draws.csv")).unwrap();
    let layout = read_draws(&draws, "draws").unwrap().layout;
    let data = tempfile::tempdir().unwrap();
    let app = pollsmc_service::router(pollsmc_service::AppState::open(data.path(), 1).unwrap());
    let (status, body) = call(
        &app,
        "POST",
        "/baselines",
        Some(json!({
            "spec": spec,
            "polls": polls.iter().map(|p| PollEntry::from_observation(p, &spec)).collect::<Vec<_>>(),
            "n_slots": layout.n_slots,
            "draws": draws,
        })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let schedule = ScheduleDoc::parse(&std::fs::read_to_string(&doc).unwrap(), "loc.kv").unwrap();
    let (status, body) = call(
        &app,
        "POST",
        "/scenarios",
        Some(json!({"parent": "baseline-1", "schedule": schedule, "config": {"seed": 9, "sweeps": 2}})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let text = loop {
        let (status, text) = call(&app, "GET", "/scenarios/job-1/report", None).await;
        if status == StatusCode::OK {
            break text;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    };
    let service = RunReport::from_json(&text, "service").unwrap();
    assert!(service.failure.is_none());
    assert_eq!(service.canonical_payload().unwrap(), cli.canonical_payload().unwrap());
}
