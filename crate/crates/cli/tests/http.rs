use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use petriplan_cli::server::{router, AppState};
use petriplan_core::domains::gen_counters;
use petriplan_core::planner::PlannerOptions;
use petriplan_core::problem::serialize_problem;
use petriplan_core::session::{outcome_json, parse_update, Session};
use serde_json::{json, Value};
use tower::ServiceExt;

fn opts() -> PlannerOptions {
    PlannerOptions {
        max_horizon: 8,
        threads: 1,
        ..PlannerOptions::default()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: String) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: String) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

fn counters_doc(goal: i64) -> String {
    serialize_problem(&gen_counters(1, 2, &[goal]).unwrap())
}

#[tokio::test]
async fn wire_matches_in_process() {
    let app = router(AppState::new(opts(), None));
    let (status, created) = call_json(&app, "POST", "/sessions", counters_doc(3)).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(created["round"], 0);
    assert_eq!(created["relaxation"], "infeasible");

    let p0 = gen_counters(1, 2, &[3]).unwrap();
    let mut local = Session::create("local", p0, opts()).unwrap();
    assert_eq!(created["digest"], local.digest());

    let (status, solved) = call_json(&app, "POST", &format!("/sessions/{id}/solve"), String::new()).await;
    assert_eq!(status, StatusCode::OK);
    let report = local.solve_round().unwrap();
    assert_eq!(solved["outcome"], outcome_json(local.problem(), &report.outcome));
    assert_eq!(solved["outcome"]["explanations"][0]["goalIndices"], json!([0]));

    let c = local.problem().vars[0].name.clone();
    let update = json!({
        "type": "goal_change",
        "del": [0],
        "add": [{ "rel": { "terms": [[1, c]], "op": "=", "rhs": 2 } }],
    });
    let u = parse_update(local.problem(), &update);
    let (status, applied) = call_json(&app, "POST", &format!("/sessions/{id}/updates"), update.to_string()).await;
    let u = u.unwrap();
    assert_eq!(status, StatusCode::OK, "{applied}");
    let relax = local.apply_update(&u).unwrap();
    assert_eq!(applied["round"], 1);
    assert_eq!(applied["relaxation"], serde_json::to_value(relax).unwrap());
    assert_eq!(applied["digest"], local.digest());

    let (_, solved) = call_json(&app, "POST", &format!("/sessions/{id}/solve"), String::new()).await;
    let report = local.solve_round().unwrap();
    let ours = outcome_json(local.problem(), &report.outcome);
    assert_eq!(serde_json::to_string(&solved["outcome"]).unwrap(), serde_json::to_string(&ours).unwrap());
    assert_eq!(solved["outcome"]["status"], "plan");
    assert_eq!(solved["outcome"]["linearization"].as_array().unwrap().len(), 2);

    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}"), String::new()).await;
    let mut expected = local.state_json();
    expected["id"] = json!(id);
    assert_eq!(state, expected);

    let (status, journal) = call(&app, "GET", &format!("/sessions/{id}/journal"), String::new()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(journal, local.journal_lines());
    let replayed = Session::replay("again", &journal, opts()).unwrap();
    assert_eq!(replayed.digest(), local.digest());
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = router(AppState::new(opts(), None));
    let (_, a) = call_json(&app, "POST", "/sessions", counters_doc(2)).await;
    let (_, b) = call_json(&app, "POST", "/sessions", counters_doc(3)).await;
    let (a, b) = (a["id"].as_str().unwrap().to_string(), b["id"].as_str().unwrap().to_string());
    assert_ne!(a, b);

    let ua = format!("/sessions/{a}/updates");
    let sa = format!("/sessions/{a}/solve");
    let sb = format!("/sessions/{b}/solve");
    let update = json!({ "type": "goal_change", "del": [0], "add": [] }).to_string();
    let ((_, ra), (_, rb), (_, rc)) = tokio::join!(
        call_json(&app, "POST", &ua, update),
        call_json(&app, "POST", &sb, String::new()),
        call_json(&app, "POST", &sa, String::new()),
    );
    assert_eq!(ra["round"], 1);
    assert_eq!(rb["outcome"]["status"], "infeasible");
    assert!(rc["outcome"]["status"] == "plan");

    let (_, state_b) = call_json(&app, "GET", &format!("/sessions/{b}"), String::new()).await;
    assert_eq!(state_b["round"], 0);
    assert_eq!(state_b["goal"].as_array().unwrap().len(), 1);
    let (_, state_a) = call_json(&app, "GET", &format!("/sessions/{a}"), String::new()).await;
    assert_eq!(state_a["round"], 1);
    assert!(state_a["goal"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn malformed_update_leaves_round() {
    let app = router(AppState::new(opts(), None));
    let (_, created) = call_json(&app, "POST", "/sessions", counters_doc(2)).await;
    let id = created["id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/updates");
    let bad = [
        "not json".to_string(),
        json!({ "type": "rename" }).to_string(),
        json!({ "type": "goal_change", "del": [5] }).to_string(),
        json!({ "type": "goal_change", "extra": 1 }).to_string(),
        json!({ "type": "add_constraints", "constraints": [{ "rel": { "terms": [[1, "nope"]], "op": "<=", "rhs": 1 } }] }).to_string(),
    ];
    for body in bad {
        let (status, err) = call_json(&app, "POST", &uri, body.clone()).await;
        assert!(status.is_client_error(), "{body} -> {status}");
        assert!(err["error"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
    }
    let (_, state) = call_json(&app, "GET", &format!("/sessions/{id}"), String::new()).await;
    assert_eq!(state["round"], 0);
    assert_eq!(state["digest"], created["digest"]);
    let (_, journal) = call(&app, "GET", &format!("/sessions/{id}/journal"), String::new()).await;
    assert_eq!(journal.lines().count(), 1);
}

#[tokio::test]
async fn bad_requests() {
    let app = router(AppState::new(opts(), None));
    let (status, _) = call_json(&app, "GET", "/sessions/s99", String::new()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, err) = call_json(&app, "POST", "/sessions", "{\"vars\": 3}".to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["error"].is_string());
    let (status, _) = call_json(&app, "POST", "/sessions?bogus=1", counters_doc(2)).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn journal_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::load(opts(), dir.path()).unwrap());
    let (_, created) = call_json(&app, "POST", "/sessions", counters_doc(3)).await;
    let id = created["id"].as_str().unwrap().to_string();
    call_json(&app, "POST", &format!("/sessions/{id}/solve"), String::new()).await;
    let update = json!({ "type": "goal_change", "del": [0], "add": [] }).to_string();
    call_json(&app, "POST", &format!("/sessions/{id}/updates"), update).await;
    let (_, before) = call_json(&app, "GET", &format!("/sessions/{id}"), String::new()).await;

    let state = AppState::load(opts(), dir.path()).unwrap();
    assert_eq!(state.session_count(), 1);
    let app = router(state);
    let (_, after) = call_json(&app, "GET", &format!("/sessions/{id}"), String::new()).await;
    assert_eq!(after, before);
    let (status, next) = call_json(&app, "POST", "/sessions", counters_doc(1)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_ne!(next["id"], json!(id));
}
