use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use colmatch_core::agent::Agent;
use colmatch_core::clock::SteppingClock;
use colmatch_core::session::CandidateFilter;
use colmatch_core::synth::{generate_task, random_action, SynthConfig, SynthTask};
use colmatch_core::{Action, CurationSession, Execution, SessionConfig, SessionContext};
use colmatch_service::{router, SessionStore, StoreConfig};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "XcolmatchX";

fn store_config() -> StoreConfig {
    StoreConfig {
        exec: Execution::Sequential,
        clock: Arc::new(SteppingClock::new(1_000, 10)),
        agent_factory: Arc::new(|| Agent::offline().with_clock(Arc::new(SteppingClock::new(5_000, 1)))),
        ..StoreConfig::default()
    }
}

fn app_with(config: StoreConfig) -> (Router, Arc<SessionStore>) {
    let store = Arc::new(SessionStore::new(config));
    (router(store.clone()), store)
}

fn app() -> Router {
    app_with(store_config()).0
}

fn task(seed: u64) -> SynthTask {
    generate_task(&SynthConfig::new(seed, 40, 8))
}

fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, file, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match file {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\n\r\n").as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = get(app, uri).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn upload(app: &Router, parts: &[(&str, Option<&str>, &[u8])]) -> (StatusCode, Value) {
    let req = Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn create(app: &Router, task: &SynthTask, config: Option<Value>) -> String {
    let source = task.source.to_delimited();
    let target = task.target_json();
    let config = config.map(|c| c.to_string());
    let mut parts: Vec<(&str, Option<&str>, &[u8])> =
        vec![("source", Some("source.csv"), &source), ("target", Some("target.json"), target.as_bytes())];
    if let Some(c) = &config {
        parts.push(("config", None, c.as_bytes()));
    }
    let (status, body) = upload(app, &parts).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

async fn act(app: &Router, id: &str, a: &Action) -> (StatusCode, Value) {
    post_json(app, &format!("/sessions/{id}/actions"), &serde_json::to_value(a).unwrap()).await
}

async fn all_candidates(app: &Router, id: &str) -> Vec<Value> {
    let (status, page) = get_json(app, &format!("/sessions/{id}/candidates?page_size=100000")).await;
    assert_eq!(status, StatusCode::OK);
    page["items"].as_array().unwrap().clone()
}

/// Percent-encodes a path segment.
fn seg(raw: &str) -> String {
    raw.bytes()
        .map(|b| if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) { (b as char).to_string() } else { format!("%{b:02X}") })
        .collect()
}

fn detail_uri(id: &str, source: &str, target: &str) -> String {
    format!("/sessions/{id}/candidates/{}/{}", seg(source), seg(target))
}

fn assert_error(status: StatusCode, body: &Value, want: StatusCode, code: &str) {
    assert_eq!(status, want, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].is_string());
    assert!(body.get("detail").is_some());
}

fn direct(task: &SynthTask, config: SessionConfig) -> CurationSession {
    let ctx = SessionContext {
        agent: Arc::new(Agent::offline().with_clock(Arc::new(SteppingClock::new(5_000, 1)))),
        clock: Arc::new(SteppingClock::new(1_000, 10)),
        exec: Execution::Sequential,
    };
    let source = colmatch_core::ingest_source(&task.source.to_delimited(), "source").unwrap();
    let target = colmatch_core::load_target(task.target_json().as_bytes(), "target").unwrap();
    CurationSession::create(source, target, config, colmatch_core::matchers::MatcherRegistry::builtin(), ctx).unwrap()
}

#[tokio::test]
async fn health_reports_version() {
    let (status, body) = get_json(&app(), "/").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn create_reports_summary() {
    let app = app();
    let t = task(3);
    let id = create(&app, &t, None).await;
    let (status, body) = get_json(&app, &format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let summary = &body["summary"];
    assert_eq!(summary["source_attributes"], t.source.attributes.len());
    assert_eq!(summary["target_attributes"], t.target.attributes.len());
    let d = direct(&t, SessionConfig::default()).summary();
    assert_eq!(summary["easy_matches"], d.easy_matches);
    assert_eq!(summary["status_counts"], serde_json::to_value(&d.status_counts).unwrap());
}

#[tokio::test]
async fn malformed_inputs_are_structured_400s() {
    let app = app();
    let t = task(1);
    let target = t.target_json();
    let (status, body) = upload(&app, &[("source", Some("s.csv"), b"a,b\n1,2,3\n"), ("target", Some("t.json"), target.as_bytes())]).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "MalformedTable");

    let source = t.source.to_delimited();
    let (status, body) = upload(&app, &[("source", Some("s.csv"), &source), ("target", Some("t.json"), b"[{\"name\": 3}]")]).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "SchemaParseError");
    assert!(body["detail"]["context"].is_string());

    let (status, body) = upload(&app, &[("source", Some("s.csv"), &source)]).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "MissingField");

    let (status, body) = upload(
        &app,
        &[("source", Some("s.csv"), &source), ("target", Some("t.json"), target.as_bytes()), ("config", None, b"{\"k\": 0}")],
    )
    .await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "InvalidConfig");

    let (status, body) = upload(
        &app,
        &[("source", Some("s.csv"), &source), ("target", Some("t.json"), target.as_bytes()), ("config", None, b"{\"bogus\": 1}")],
    )
    .await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "InvalidConfig");
}

#[tokio::test]
async fn size_limits_give_413() {
    let t = task(1);
    let source = t.source.to_delimited();
    let target = t.target_json();

    let (app, _) = app_with(StoreConfig { max_upload_bytes: 64, ..store_config() });
    let (status, body) = upload(&app, &[("source", Some("s.csv"), &source), ("target", Some("t.json"), target.as_bytes())]).await;
    assert_error(status, &body, StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge");

    let (app, _) = app_with(StoreConfig { max_attributes: 5, ..store_config() });
    let (status, body) = upload(&app, &[("source", Some("s.csv"), &source), ("target", Some("t.json"), target.as_bytes())]).await;
    assert_error(status, &body, StatusCode::PAYLOAD_TOO_LARGE, "TooManyAttributes");
    assert_eq!(body["detail"]["side"], "source");
}

#[tokio::test]
async fn identical_uploads_get_new_ids_and_equal_lists() {
    let app = app();
    let t = task(4);
    let a = create(&app, &t, None).await;
    let b = create(&app, &t, None).await;
    assert_ne!(a, b);
    assert_eq!(all_candidates(&app, &a).await, all_candidates(&app, &b).await);
}

#[tokio::test]
async fn unknown_session_and_endpoint_are_404() {
    let app = app();
    for uri in ["/sessions/nope", "/sessions/nope/candidates", "/sessions/nope/timeline", "/sessions/nope/export"] {
        let (status, body) = get_json(&app, uri).await;
        assert_error(status, &body, StatusCode::NOT_FOUND, "UnknownSession");
    }
    let (status, body) = act(&app, "nope", &Action::Undo).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "UnknownSession");
    let (status, body) = get_json(&app, "/nowhere").await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "NotFound");
}

#[tokio::test]
async fn filters_match_linear_scan() {
    let app = app();
    let t = task(5);
    let id = create(&app, &t, None).await;
    let all = all_candidates(&app, &id).await;
    let query = t.source.attributes[0].name[..3].to_uppercase();

    let (_, page) = get_json(&app, &format!("/sessions/{id}/candidates?query={query}&page_size=100000")).await;
    let q = query.to_lowercase();
    let expected: Vec<&Value> = all
        .iter()
        .filter(|c| {
            c["source"].as_str().unwrap().to_lowercase().contains(&q) || c["target"].as_str().unwrap().to_lowercase().contains(&q)
        })
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(page["items"].as_array().unwrap().iter().collect::<Vec<_>>(), expected);

    let (_, page) = get_json(&app, &format!("/sessions/{id}/candidates?min_score=0.6&status=suggested&page_size=100000")).await;
    let expected: Vec<&Value> = all
        .iter()
        .filter(|c| c["ensemble_score"].as_f64().unwrap() >= 0.6 && c["status"] == "suggested")
        .collect();
    assert_eq!(page["items"].as_array().unwrap().iter().collect::<Vec<_>>(), expected);

    let (status, page) = get_json(&app, &format!("/sessions/{id}/candidates?min_score=1.1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page["total"], 0);

    let (status, body) = get_json(&app, &format!("/sessions/{id}/candidates?min_score=high")).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "BadFilter");
    let (status, body) = get_json(&app, &format!("/sessions/{id}/candidates?status=maybe")).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "BadFilter");
    let (status, body) = get_json(&app, &format!("/sessions/{id}/candidates?colour=red")).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "BadFilter");
}

#[tokio::test]
async fn pagination_is_stable() {
    let app = app();
    let t = task(6);
    let id = create(&app, &t, Some(json!({ "k": 3 }))).await;
    let all = all_candidates(&app, &id).await;
    let src = all[0]["source"].as_str().unwrap().to_string();
    let (_, first) = get_json(&app, &format!("/sessions/{id}/candidates?page_size=5")).await;
    let n = first["total"].as_u64().unwrap() as usize;
    let mut collected = Vec::new();
    for p in 1..=first["pages"].as_u64().unwrap() {
        let (_, page) = get_json(&app, &format!("/sessions/{id}/candidates?page_size=5&page={p}")).await;
        let items = page["items"].as_array().unwrap();
        assert_eq!(items.len(), 5.min(n - collected.len()));
        collected.extend(items.iter().cloned());
    }
    assert_eq!(collected, all);
    assert!(all.iter().filter(|c| c["source"] == src.as_str()).count() <= 3);
}

#[tokio::test]
async fn accept_shadows_siblings_and_undo_restores_export() {
    let app = app();
    let t = task(7);
    let id = create(&app, &t, Some(json!({ "auto_accept_easy": false }))).await;
    let (_, before) = get(&app, &format!("/sessions/{id}/export?format=json")).await;
    let all = all_candidates(&app, &id).await;
    let c = all.iter().find(|c| c["status"] == "suggested").unwrap();
    let (source, target) = (c["source"].as_str().unwrap(), c["target"].as_str().unwrap());

    let (status, outcome) = post_json(&app, &format!("/sessions/{id}/actions"), &json!({"action": "accept", "source": source, "target": target})).await;
    assert_eq!(status, StatusCode::OK, "{outcome}");
    assert_eq!(outcome["seq"], 1);
    assert!(outcome["weights"].is_object());
    assert_eq!(outcome["affected"]["source"], source);

    for c in all_candidates(&app, &id).await.iter().filter(|c| c["source"] == source) {
        let want = if c["target"] == target { "accepted" } else { "shadowed" };
        assert_eq!(c["status"], want);
    }
    let (_, csv) = get(&app, &format!("/sessions/{id}/export?format=csv")).await;
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("source_attribute,target_attribute,score,status\n"));

    let (status, body) = post_json(&app, &format!("/sessions/{id}/actions"), &json!({"action": "accept", "source": source, "target": target})).await;
    assert_error(status, &body, StatusCode::CONFLICT, "InvalidTransition");

    let (status, _) = act(&app, &id, &Action::Undo).await;
    assert_eq!(status, StatusCode::OK);
    let (_, timeline) = get_json(&app, &format!("/sessions/{id}/timeline")).await;
    assert_eq!(timeline["cursor"], 0);
    assert_eq!(timeline["events"].as_array().unwrap().len(), 1);
    let (_, after) = get(&app, &format!("/sessions/{id}/export?format=json")).await;
    let strip = |bytes: &[u8]| {
        let mut v: Value = serde_json::from_slice(bytes).unwrap();
        v.as_object_mut().unwrap().remove("timeline");
        v
    };
    assert_eq!(strip(&before), strip(&after));

    let (status, body) = act(&app, &id, &Action::Undo).await;
    assert_error(status, &body, StatusCode::CONFLICT, "NothingToUndo");
    let (status, body) = act(&app, &id, &Action::JumpTo { seq: 9 }).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "UnknownSeq");
    let (status, body) = post_json(&app, &format!("/sessions/{id}/actions"), &json!({"action": "dance"})).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "InvalidAction");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_mutations_serialize() {
    let app = app();
    let t = task(8);
    let id = create(&app, &t, Some(json!({ "auto_accept_easy": false }))).await;
    let all = all_candidates(&app, &id).await;
    let mut picks = all.iter().filter(|c| c["rank"] == 1 && c["status"] == "suggested");
    let a = picks.next().unwrap();
    let b = picks.next().unwrap();
    let body = |c: &Value| json!({"action": "accept", "source": c["source"], "target": c["target"]});
    let uri = format!("/sessions/{id}/actions");
    let (body_a, body_b) = (body(a), body(b));
    let (ra, rb) = tokio::join!(post_json(&app, &uri, &body_a), post_json(&app, &uri, &body_b));
    assert_eq!(ra.0, StatusCode::OK);
    assert_eq!(rb.0, StatusCode::OK);
    let mut seqs = vec![ra.1["seq"].as_u64().unwrap(), rb.1["seq"].as_u64().unwrap()];
    seqs.sort();
    assert_eq!(seqs, [1, 2]);
    let (_, timeline) = get_json(&app, &format!("/sessions/{id}/timeline")).await;
    assert_eq!(timeline["events"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn detail_is_cached_and_unknown_pairs_404() {
    let app = app();
    let t = task(9);
    let id = create(&app, &t, None).await;
    let all = all_candidates(&app, &id).await;
    let c = &all[0];
    let uri = detail_uri(&id, c["source"].as_str().unwrap(), c["target"].as_str().unwrap());
    let (status, first) = get_json(&app, &uri).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    assert_eq!(first["verdict_cached"], false);
    let (_, second) = get_json(&app, &uri).await;
    assert_eq!(second["verdict_cached"], true);
    assert_eq!(first["agent_verdict"], second["agent_verdict"]);
    assert_eq!(second["agent_verdict"]["from_fallback"], true);

    let (status, body) = get_json(&app, &detail_uri(&id, c["source"].as_str().unwrap(), "nope")).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "UnknownTarget");

    if let Some(easy) = all.iter().find(|c| c["status"] == "easy_accepted") {
        let uri = detail_uri(&id, easy["source"].as_str().unwrap(), easy["target"].as_str().unwrap());
        let (_, detail) = get_json(&app, &uri).await;
        assert_eq!(detail["ensemble_score"], 1.0);
        assert_eq!(detail["easy"], true);
    }
}

#[tokio::test]
async fn export_formats_and_import_round_trip() {
    let app = app();
    let t = task(10);
    let id = create(&app, &t, None).await;
    let all = all_candidates(&app, &id).await;
    let c = all.iter().find(|c| c["status"] == "suggested").unwrap();
    act(&app, &id, &Action::Reject { source: c["source"].as_str().unwrap().into(), target: c["target"].as_str().unwrap().into() }).await;

    let (status, body) = get_json(&app, &format!("/sessions/{id}/export?format=xml")).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "UnknownFormat");

    let (_, json_export) = get(&app, &format!("/sessions/{id}/export?format=json")).await;
    let req = Request::post("/sessions/import").body(Body::from(json_export.clone())).unwrap();
    let (status, created) = send(&app, req).await;
    assert_eq!(status, StatusCode::CREATED);
    let created: Value = serde_json::from_slice(&created).unwrap();
    let copy = created["id"].as_str().unwrap();
    let (_, again) = get(&app, &format!("/sessions/{copy}/export?format=json")).await;
    assert_eq!(String::from_utf8(again).unwrap(), String::from_utf8(json_export).unwrap());

    let (_, clusters) = get_json(&app, &format!("/sessions/{id}/clusters")).await;
    let members: usize = clusters["clusters"].as_array().unwrap().iter().map(|c| c.as_array().unwrap().len()).sum();
    assert_eq!(members, t.source.attributes.len());
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = StoreConfig { session_dir: Some(dir.path().to_path_buf()), ..store_config() };
    let t = task(11);
    let (id, before, accepted_weight) = {
        let (app, _) = app_with(config.clone());
        let id = create(&app, &t, Some(json!({ "k": 5 }))).await;
        let all = all_candidates(&app, &id).await;
        let c = all.iter().find(|c| c["status"] == "suggested").unwrap();
        let (s, tg) = (c["source"].as_str().unwrap().to_string(), c["target"].as_str().unwrap().to_string());
        get_json(&app, &detail_uri(&id, &s, &tg)).await;
        let mut accepted_weight = None;
        for a in [
            Action::Accept { source: s.clone(), target: tg.clone() },
            Action::Feedback { key: format!("{s}::{tg}"), feedback: Some(colmatch_core::agent::Feedback::Confirmed) },
            Action::SetThresholds { name_threshold: Some(0.8), value_threshold: None },
            Action::Undo,
            Action::SetWeights { weights: [("name_fuzzy".to_string(), 1.7)].into() },
        ] {
            let (status, body) = act(&app, &id, &a).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            accepted_weight.get_or_insert(body["weights"]["name_fuzzy"].as_f64().unwrap());
        }
        let (_, export) = get(&app, &format!("/sessions/{id}/export?format=json")).await;
        (id, export, accepted_weight.unwrap())
    };
    // A torn trailing write is dropped on reload.
    let events = dir.path().join(&id).join("events.jsonl");
    let mut text = std::fs::read_to_string(&events).unwrap();
    text.push_str("{\"timestamp_ms\": 9, \"op\": {\"act");
    std::fs::write(&events, text).unwrap();

    let (store, failures) = SessionStore::open(config.clone()).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    let app = router(Arc::new(store));
    let (_, after) = get(&app, &format!("/sessions/{id}/export?format=json")).await;
    assert_eq!(String::from_utf8(after).unwrap(), String::from_utf8(before).unwrap());
    let (status, _) = act(&app, &id, &Action::Undo).await;
    assert_eq!(status, StatusCode::OK);

    let (store, failures) = SessionStore::open(config).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    let cursor = store.read(&id, |s| s.timeline().cursor()).unwrap();
    assert_eq!(cursor, 2);
    assert_eq!(store.read(&id, |s| s.weights().weights["name_fuzzy"]).unwrap(), accepted_weight);
}

#[tokio::test]
async fn api_and_direct_calls_agree() {
    for seed in [21u64, 22, 23] {
        let app = app();
        let t = task(seed);
        let id = create(&app, &t, None).await;
        let mut session = direct(&t, SessionConfig::default());
        for c in session.candidate_lists().iter().map(|l| l.candidates[0].clone()).collect::<Vec<_>>() {
            session.candidate_detail(&c.source, &c.target).unwrap();
            get_json(&app, &detail_uri(&id, &c.source, &c.target)).await;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..25 {
            let a = random_action(&mut rng, &session);
            let local = session.apply(a.clone());
            let (status, body) = act(&app, &id, &a).await;
            assert_eq!(local.is_ok(), status == StatusCode::OK, "{a:?}: {body}");
        }
        let (_, csv) = get(&app, &format!("/sessions/{id}/export?format=csv")).await;
        assert_eq!(String::from_utf8(csv).unwrap(), session.export_csv());
        let (_, page) = get_json(&app, &format!("/sessions/{id}/candidates?page_size=100000")).await;
        let local = session.list_candidates(&CandidateFilter::default(), 1, 100_000).unwrap();
        assert_eq!(page, serde_json::to_value(local).unwrap());
    }
}
