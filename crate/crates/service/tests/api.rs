use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pollsmc_core::io::report::RunReport;
use pollsmc_core::io::schedule_doc::ScheduleDoc;
use pollsmc_core::scenario::execute;
use pollsmc_core::smc::SmcConfig;
use pollsmc_service::registry::Store;
use pollsmc_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const MESH: usize = 8;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, text) = call(app, "GET", uri, None, &[]).await;
    (s, serde_json::from_str(&text).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, text) = call(app, "POST", uri, Some(body), &[]).await;
    (s, serde_json::from_str(&text).unwrap_or(Value::Null))
}

/// A desk baseline with a short reference fit.
async fn desk_baseline(app: &Router) -> String {
    let (s, v) = post_json(
        app,
        "/baselines",
        json!({"desk_seed": 1, "fit": {"iterations": 500, "burn_in": 200, "seed": 4}}),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["particles"], 300);
    v["id"].as_str().unwrap().to_string()
}

async fn submit(app: &Router, body: Value) -> String {
    let (s, v) = post_json(app, "/scenarios", body).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["state"], "QUEUED");
    v["id"].as_str().unwrap().to_string()
}

async fn wait_final(app: &Router, id: &str) -> Value {
    for _ in 0..1200 {
        let (_, v) = get_json(app, &format!("/scenarios/{id}")).await;
        if v["state"] == "DONE" || v["state"] == "FAILED" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("{id} did not finish");
}

async fn report(app: &Router, id: &str) -> RunReport {
    let (s, text) = call(app, "GET", &format!("/scenarios/{id}/report"), None, &[]).await;
    assert_eq!(s, StatusCode::OK, "{text}");
    RunReport::from_json(&text, "report").unwrap()
}

fn open(dir: &Path, workers: usize) -> Router {
    router(AppState::open(dir, workers).unwrap())
}

/// `(event, id, data)` triples of a server-sent event body.
fn parse_events(text: &str) -> Vec<(String, Option<String>, String)> {
    text.split("\n\n")
        .filter(|b| b.lines().any(|l| l.starts_with("event:")))
        .map(|block| {
            let field = |name: &str| {
                block
                    .lines()
                    .find_map(|l| l.strip_prefix(name).map(|v| v.trim_start().to_string()))
            };
            (field("event:").unwrap(), field("id:"), field("data:").unwrap_or_default())
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn identity_schedule_finishes_without_rejuvenating() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 2);
    let base = desk_baseline(&app).await;
    let id = submit(&app, json!({"parent": base, "schedule": {"family": "identity", "mesh": MESH}})).await;
    let view = wait_final(&app, &id).await;
    assert_eq!(view["state"], "DONE", "{view}");
    assert_eq!(view["steps_done"], MESH);
    let r = report(&app, &id).await;
    assert_eq!(r.diagnostics.rejuvenations, 0);
    assert!(r.records.iter().all(|rec| rec.ess_before > 299.0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hypothetical_poll_preset_moves_the_pennsylvania_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 2);
    let base = desk_baseline(&app).await;
    let (s, presets) = get_json(&app, &format!("/baselines/{base}/presets?mesh={MESH}")).await;
    assert_eq!(s, StatusCode::OK);
    let preset = presets
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == "hypothetical-poll")
        .unwrap()
        .clone();
    let id = submit(&app, json!({"parent": base, "schedule": preset["document"]})).await;
    assert_eq!(wait_final(&app, &id).await["state"], "DONE");
    let (s, f) = get_json(&app, &format!("/scenarios/{id}/forecast?state=Pennsylvania")).await;
    assert_eq!(s, StatusCode::OK, "{f}");
    assert_eq!(f["state"], "Pennsylvania");
    let after = f["forecast"]["mean"].as_array().unwrap();
    let before = f["parent"]["mean"].as_array().unwrap();
    assert_eq!(after.len(), before.len());
    // A 50% poll pulls the state towards one half.
    let last = after.len() - 1;
    let (a, b) = (after[last].as_f64().unwrap(), before[last].as_f64().unwrap());
    assert!((a - 0.5).abs() < (b - 0.5).abs(), "after {a}, before {b}");

    let (s, full) = get_json(&app, &format!("/scenarios/{id}/forecast")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(full["forecast"]["states"].as_array().unwrap().len(), 5);
    let (s, _) = get_json(&app, &format!("/scenarios/{id}/forecast?state=Atlantis")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_branches_match_serial_core_runs() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 2);
    let base = desk_baseline(&app).await;
    let trunk = submit(
        &app,
        json!({"parent": base, "schedule": {"family": "prior_scale", "a_max": 1.25, "mesh": MESH}, "snapshots": [4]}),
    )
    .await;
    let view = wait_final(&app, &trunk).await;
    assert_eq!(view["snapshots"], json!([4, MESH]));

    let docs = [
        json!({"family": "rw_scale", "a_max": 0.8, "mesh": MESH}),
        json!({"family": "prior_location", "state": "Ohio", "a_max": 0.2, "mesh": MESH}),
    ];
    let parent = format!("{trunk}@4");
    let a = submit(&app, json!({"parent": parent, "schedule": docs[0], "config": {"seed": 11}})).await;
    let b = submit(&app, json!({"parent": parent, "schedule": docs[1], "config": {"seed": 11}})).await;
    assert_eq!(wait_final(&app, &a).await["state"], "DONE");
    assert_eq!(wait_final(&app, &b).await["state"], "DONE");

    let store = Store {
        root: dir.path().to_path_buf(),
    };
    let baseline = store.load_baseline(&store.baseline_dir(&base)).unwrap();
    for (id, doc) in [(&a, &docs[0]), (&b, &docs[1])] {
        let (particles, knob) = store.load_snapshot(&trunk, 4).unwrap();
        let doc: ScheduleDoc = serde_json::from_value(doc.clone()).unwrap();
        let schedule = doc.build_on(&baseline.model, MESH, None, &knob).unwrap();
        let config = SmcConfig {
            seed: 11,
            ..SmcConfig::default()
        };
        let serial = execute(&baseline.model, &schedule, particles, &config, &[MESH], &mut |_| {}).unwrap();
        assert_eq!(
            report(&app, id).await.canonical_payload().unwrap(),
            serial.report.canonical_payload().unwrap(),
            "{id}"
        );
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn events_arrive_in_step_order_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 1);
    let base = desk_baseline(&app).await;
    let id = submit(&app, json!({"parent": base, "schedule": {"family": "prior_scale", "a_max": 0.8, "mesh": MESH}})).await;
    // Subscribed while the job is queued or running: the stream ends itself.
    let (s, live) = call(&app, "GET", &format!("/scenarios/{id}/events"), None, &[]).await;
    assert_eq!(s, StatusCode::OK);
    let events = parse_events(&live);
    assert_eq!(events.len(), MESH + 1, "{live}");
    for (i, (name, ev_id, data)) in events[..MESH].iter().enumerate() {
        assert_eq!(name, "step");
        assert_eq!(ev_id.as_deref(), Some((i + 1).to_string().as_str()));
        let rec: Value = serde_json::from_str(data).unwrap();
        assert_eq!(rec["step"], i + 1);
    }
    let (name, _, data) = &events[MESH];
    assert_eq!(name, "end");
    assert_eq!(serde_json::from_str::<Value>(data).unwrap()["state"], "DONE");

    let (_, resumed) = call(&app, "GET", &format!("/scenarios/{id}/events"), None, &[("last-event-id", "5")]).await;
    let ids: Vec<Option<String>> = parse_events(&resumed).into_iter().map(|e| e.1).collect();
    assert_eq!(ids, vec![Some("6".into()), Some("7".into()), Some("8".into()), None]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_are_structured_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path(), 1);
    let (s, v) = get_json(&app, "/scenarios/job-9").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "not_found");
    let (s, _) = get_json(&app, "/baselines/baseline-9/forecast").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = post_json(&app, "/scenarios", json!({"schedule": {"family": "identity"}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "parent", "{v}");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": "x", "schedule": {"family": "identity"}, "config": {"mesh": "ten"}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "config.mesh", "{v}");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": "x", "schedule": {"family": "prior_scale", "a_max": "big"}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "schedule.a_max", "{v}");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": "x", "schedule": {"family": "rw_scale", "a_max": 1.1, "msh": 3}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "schedule.msh", "{v}");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": "x", "schedule": {"family": "warp"}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "schedule.family", "{v}");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": "x", "schedule": {"family": "identity"}, "colour": 1})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "colour", "{v}");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": "baseline-9", "schedule": {"family": "identity"}})).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{v}");

    let base = desk_baseline(&app).await;
    let (s, v) = post_json(
        &app,
        "/scenarios",
        json!({"parent": base, "schedule": {"family": "data_arrival", "polls_file": "x.csv"}}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "schedule.polls_file");

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": base, "schedule": {"family": "identity"}, "config": {"ess_fraction": 2.0}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["error"]["kind"], "config");

    let (s, v) = post_json(
        &app,
        "/scenarios",
        json!({"parent": base, "schedule": {"family": "identity", "mesh": 4}, "snapshots": [9]}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "snapshots");

    let (s, v) = post_json(
        &app,
        "/scenarios",
        json!({"parent": base, "schedule": {"family": "data_value", "poll_id": "p0001", "target_y": 1e9}}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["field"], "schedule", "{v}");
    let (_, jobs) = get_json(&app, "/scenarios").await;
    assert_eq!(jobs, json!([]));

    let (s, v) = post_json(&app, "/scenarios", json!({"parent": format!("{base}@2"), "schedule": {"family": "identity"}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn lineage_is_a_forest_and_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (base, trunk, branch, cont) = {
        let app = open(dir.path(), 2);
        let base = desk_baseline(&app).await;
        let trunk = submit(&app, json!({"parent": base, "schedule": {"family": "prior_scale", "a_max": 1.25, "mesh": 4}, "snapshots": [2]})).await;
        wait_final(&app, &trunk).await;
        let branch = submit(&app, json!({"parent": format!("{trunk}@2"), "schedule": {"family": "identity", "mesh": 2}})).await;
        let cont = submit(&app, json!({"parent": trunk, "schedule": {"family": "rw_scale", "a_max": 1.1, "mesh": 3}})).await;
        wait_final(&app, &branch).await;
        wait_final(&app, &cont).await;
        (base, trunk, branch, cont)
    };

    let app = open(dir.path(), 2);
    let (s, lineage) = get_json(&app, "/lineage").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(lineage["roots"], json!([base]));
    let nodes = lineage["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 4);
    let node = |id: &str| nodes.iter().find(|n| n["id"] == id).unwrap().clone();
    assert_eq!(node(&base)["children"], json!([trunk]));
    assert_eq!(node(&trunk)["children"], json!([branch, cont]));
    assert_eq!(node(&branch)["parent_step"], 2);
    assert!(node(&cont).get("parent_step").is_none());
    // Every node reaches a root without revisiting a node.
    for n in nodes {
        let mut at = n["id"].as_str().unwrap().to_string();
        for _ in 0..=nodes.len() {
            match node(&at)["parent"].as_str() {
                Some(p) => at = p.to_string(),
                None => break,
            }
        }
        assert_eq!(at, base);
    }

    // Reloaded jobs keep their state, reports and snapshots.
    assert_eq!(wait_final(&app, &cont).await["state"], "DONE");
    assert_eq!(report(&app, &cont).await.records.len(), 3);
    let again = submit(&app, json!({"parent": format!("{trunk}@2"), "schedule": {"family": "identity", "mesh": 2}})).await;
    assert_eq!(again, "job-4");
    assert_eq!(wait_final(&app, &again).await["state"], "DONE");
    assert_eq!(
        report(&app, &again).await.canonical_payload().unwrap(),
        report(&app, &branch).await.canonical_payload().unwrap()
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn jobs_cut_off_by_a_stop_come_back_failed() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let app = open(dir.path(), 1);
        let base = desk_baseline(&app).await;
        let id = submit(&app, json!({"parent": base, "schedule": {"family": "identity", "mesh": 2}})).await;
        wait_final(&app, &id).await;
        id
    };
    let path = dir.path().join("jobs").join(&id).join("job.json");
    let mut meta: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    meta["state"] = json!("RUNNING");
    std::fs::write(&path, meta.to_string()).unwrap();

    let app = open(dir.path(), 1);
    let (_, view) = get_json(&app, &format!("/scenarios/{id}")).await;
    assert_eq!(view["state"], "FAILED");
    assert_eq!(view["error"]["kind"], "interrupted");
    let (s, _) = post_json(&app, "/scenarios", json!({"parent": id, "schedule": {"family": "identity"}})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}
