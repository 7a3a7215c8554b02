use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use morphforge::config::RunConfig;
use morphforge::kinematics::DesignMode;
use morphforge::scene::load_scene;
use morphforge::solver::NoProgress;
use morphforge_service::jobs::{encode_result, execute, JobKind, JobRequest, JobResult};
use morphforge_service::store::{new_id, Job, JobStatus, Store};
use morphforge_service::{router, AppState, QUEUE_BOUND};
use serde_json::{json, Value};
use tower::ServiceExt;

const SCENE: &str = r#"{
  "goals": [
    {"id": "a", "position": [0.35, 0.1, 0.25], "orientation6d": [1,0,0,0,1,0], "tolerance": "position_only"},
    {"id": "b", "position": [0.2, -0.3, 0.3], "orientation6d": [1,0,0,0,1,0], "tolerance": "position_only"}
  ],
  "obstacles": [{"type": "sphere", "id": "o", "center": [0.6, 0.6, 0.0], "radius": 0.1}]
}"#;

fn small_config() -> RunConfig {
    let mut c = RunConfig { mode: DesignMode::Free, dof: 3, seed: 3, ..RunConfig::default() };
    c.solver.n_candidates = 2;
    c.solver.adam_steps = 10;
    c
}

fn slow_config() -> RunConfig {
    let mut c = RunConfig { mode: DesignMode::Free, dof: 6, ..RunConfig::default() };
    c.solver.n_candidates = 64;
    c.solver.adam_steps = 2000;
    c
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<String>, headers: &[(&str, &str)]) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    (parts.status, parts.headers, to_bytes(body, usize::MAX).await.unwrap().to_vec())
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn create_scene(app: &Router) -> String {
    let (status, headers, body) = send(app, "POST", "/api/v1/scenes", Some(SCENE.into()), &[]).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(headers[header::ETAG], "\"1\"");
    let id = json_of(&body)["id"].as_str().unwrap().to_string();
    assert_eq!(headers[header::LOCATION], format!("/api/v1/scenes/{id}").as_str());
    id
}

async fn submit(app: &Router, req: &JobRequest) -> (StatusCode, Value) {
    let (status, _, body) = send(app, "POST", "/api/v1/jobs", Some(serde_json::to_string(req).unwrap()), &[]).await;
    (status, json_of(&body))
}

async fn wait_finished(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (_, _, body) = send(app, "GET", &format!("/api/v1/jobs/{id}"), None, &[]).await;
        let job = json_of(&body);
        if job["status"] == "done" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("job {id} did not finish");
}

fn app(dir: &std::path::Path, workers: usize) -> (Arc<AppState>, Router) {
    let state = AppState::start(dir, workers).unwrap();
    (state.clone(), router(state))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scene_crud_with_revisions() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 1);
    let id = create_scene(&app).await;

    let (status, headers, _) = send(&app, "GET", &format!("/api/v1/scenes/{id}"), None, &[]).await;
    assert_eq!((status, headers[header::ETAG].to_str().unwrap()), (StatusCode::OK, "\"1\""));
    let (status, _, _) = send(&app, "GET", "/api/v1/scenes/missing", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad = SCENE.replace("\"radius\": 0.1", "\"radius\": -0.1");
    let (status, _, _) = send(&app, "POST", "/api/v1/scenes", Some(bad), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, "POST", "/api/v1/scenes", Some("{not json".into()), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let uri = format!("/api/v1/scenes/{id}");
    let (status, headers, _) = send(&app, "PUT", &uri, Some(SCENE.into()), &[("if-match", "\"1\"")]).await;
    assert_eq!((status, headers[header::ETAG].to_str().unwrap()), (StatusCode::OK, "\"2\""));
    let (status, _, _) = send(&app, "PUT", &uri, Some(SCENE.into()), &[("if-match", "\"1\"")]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _, _) = send(&app, "PUT", "/api/v1/scenes/missing", Some(SCENE.into()), &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, _, body) = send(&app, "GET", "/api/v1/scenes", None, &[]).await;
    assert_eq!(json_of(&body)["scenes"][0]["revision"], 2);
    let (status, _, _) = send(&app, "DELETE", &uri, None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _, _) = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn design_job_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 1);
    let scene_id = create_scene(&app).await;

    let missing = JobRequest { kind: JobKind::Design, scene_id: "nope".into(), config: small_config(), params: None, ik: None };
    assert_eq!(submit(&app, &missing).await.0, StatusCode::NOT_FOUND);
    let no_params = JobRequest { kind: JobKind::Evaluate, ..missing.clone() };
    let no_params = JobRequest { scene_id: scene_id.clone(), ..no_params };
    assert_eq!(submit(&app, &no_params).await.0, StatusCode::BAD_REQUEST);

    let req = JobRequest { kind: JobKind::Design, scene_id: scene_id.clone(), config: small_config(), params: None, ik: None };
    let (status, job) = submit(&app, &req).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["status"], "queued");
    let id = job["id"].as_str().unwrap().to_string();

    let (_, _, events) = send(&app, "GET", &format!("/api/v1/jobs/{id}/events"), None, &[]).await;
    let events = String::from_utf8(events).unwrap();
    assert!(events.contains("event: done"), "{events}");

    let job = wait_finished(&app, &id).await;
    assert_eq!(job["status"], "done");
    assert_eq!(job["progress"], 1.0);

    let uri = format!("/api/v1/jobs/{id}/result");
    let (status, _, first) = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let (_, _, second) = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(first, second);

    let result: JobResult = serde_json::from_slice(&first).unwrap();
    assert_eq!(result.candidates.len(), 2);
    assert!(result.candidates.windows(2).all(|p| p[0].benchmark_loss <= p[1].benchmark_loss));
    assert_eq!(result.render.candidates.len(), 2);

    // Same bytes as running the request directly, as the command line does.
    let direct = execute(&req, &load_scene(SCENE.as_bytes()).unwrap(), &NoProgress).unwrap();
    assert_eq!(encode_result(&direct), first);

    let (status, _, _) = send(&app, "POST", &format!("/api/v1/jobs/{id}/cancel"), None, &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _, _) = send(&app, "GET", "/api/v1/jobs/nope", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // Deleting the scene needs confirmation while jobs depend on it.
    let scene_uri = format!("/api/v1/scenes/{scene_id}");
    let (status, _, _) = send(&app, "DELETE", &scene_uri, None, &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _, body) = send(&app, "DELETE", &format!("{scene_uri}?confirm=true"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["deleted_jobs"], json!([id]));
    let (status, _, _) = send(&app, "GET", &uri, None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cancellation_and_queue_bound() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 1);
    let scene_id = create_scene(&app).await;
    let slow = JobRequest { kind: JobKind::Design, scene_id: scene_id.clone(), config: slow_config(), params: None, ik: None };

    let (_, running) = submit(&app, &slow).await;
    let running = running["id"].as_str().unwrap().to_string();
    for _ in 0..100 {
        let (_, _, body) = send(&app, "GET", &format!("/api/v1/jobs/{running}"), None, &[]).await;
        if json_of(&body)["status"] == "running" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (status, _, _) = send(&app, "GET", &format!("/api/v1/jobs/{running}/result"), None, &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut queued = Vec::new();
    for _ in 0..QUEUE_BOUND {
        let (status, job) = submit(&app, &slow).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        queued.push(job["id"].as_str().unwrap().to_string());
    }
    assert_eq!(submit(&app, &slow).await.0, StatusCode::TOO_MANY_REQUESTS);

    for id in &queued {
        let (status, _, body) = send(&app, "POST", &format!("/api/v1/jobs/{id}/cancel"), None, &[]).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(json_of(&body)["reason"], "cancelled");
    }
    let (status, _, _) = send(&app, "POST", &format!("/api/v1/jobs/{running}/cancel"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let job = wait_finished(&app, &running).await;
    assert_eq!((job["status"].as_str(), job["reason"].as_str()), (Some("failed"), Some("cancelled")));
    let (_, _, events) = send(&app, "GET", &format!("/api/v1/jobs/{running}/events"), None, &[]).await;
    assert!(String::from_utf8(events).unwrap().contains("event: failed"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn progress_streams_until_done() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path(), 1);
    let scene_id = create_scene(&app).await;
    let mut config = small_config();
    config.solver.n_candidates = 4;
    config.solver.adam_steps = 300;
    let req = JobRequest { kind: JobKind::Design, scene_id, config, params: None, ik: None };
    let (_, job) = submit(&app, &req).await;
    let id = job["id"].as_str().unwrap();
    let (_, headers, body) = send(&app, "GET", &format!("/api/v1/jobs/{id}/events"), None, &[]).await;
    assert_eq!(headers[header::CONTENT_TYPE], "text/event-stream");
    let text = String::from_utf8(body).unwrap();
    let progress: Vec<f64> = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str::<Value>(d).unwrap()["progress"].as_f64().unwrap())
        .collect();
    assert!(progress.len() >= 2, "{text}");
    assert!(progress.windows(2).all(|p| p[0] <= p[1]));
    assert_eq!(*progress.last().unwrap(), 1.0);
    assert!(text.trim_end().ends_with('}') && text.contains("event: done"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_marks_unfinished_jobs_interrupted() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let scene = store.create_scene(load_scene(SCENE.as_bytes()).unwrap()).unwrap();
    let req = JobRequest { kind: JobKind::Design, scene_id: scene.id.clone(), config: small_config(), params: None, ik: None };
    let job = Job {
        id: new_id(),
        kind: JobKind::Design,
        status: JobStatus::Running,
        progress: 0.4,
        reason: None,
        scene_revision: 1,
        request: req,
        result: None,
    };
    store.put_job(&job).unwrap();
    drop(store);

    let (_, app) = app(dir.path(), 1);
    let (status, _, body) = send(&app, "GET", &format!("/api/v1/jobs/{}", job.id), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let got = json_of(&body);
    assert_eq!((got["status"].as_str(), got["reason"].as_str()), (Some("failed"), Some("interrupted")));
    let (_, _, body) = send(&app, "GET", &format!("/api/v1/scenes/{}", scene.id), None, &[]).await;
    assert_eq!(json_of(&body)["revision"], 1);
}
