use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use morphforge::scene::load_scene;
use serde::Deserialize;
use serde_json::json;

use crate::jobs::{validate_request, JobRequest};
use crate::store::{new_id, Job, JobStatus, SceneRecord, StoreError};
use crate::{AppState, JobSnapshot, SubmitError};

/// Longest gap between progress events of a running job.
const EVENT_INTERVAL: Duration = Duration::from_millis(1000);

type AppStateRef = Arc<AppState>;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict { .. } | StoreError::HasDependents(_) => StatusCode::CONFLICT,
            StoreError::Io(_) | StoreError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.to_string())
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppStateRef) -> Router {
    Router::new()
        .route("/api/v1/scenes", post(create_scene).get(list_scenes))
        .route("/api/v1/scenes/{id}", get(get_scene).put(update_scene).delete(delete_scene))
        .route("/api/v1/jobs", post(submit_job).get(list_jobs))
        .route("/api/v1/jobs/{id}", get(get_job))
        .route("/api/v1/jobs/{id}/events", get(job_events))
        .route("/api/v1/jobs/{id}/cancel", post(cancel_job))
        .route("/api/v1/jobs/{id}/result", get(get_result))
        .with_state(state)
}

fn etag(revision: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{revision}\"")).expect("ascii")
}

fn scene_response(status: StatusCode, rec: SceneRecord) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::ETAG, etag(rec.revision));
    if status == StatusCode::CREATED {
        let loc = format!("/api/v1/scenes/{}", rec.id);
        headers.insert(header::LOCATION, HeaderValue::from_str(&loc).expect("ascii id"));
    }
    (status, headers, Json(rec)).into_response()
}

/// Revision named by an `If-Match` header; `*` matches any revision.
fn if_match(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    let Some(v) = headers.get(header::IF_MATCH) else { return Ok(None) };
    let s = v.to_str().map_err(bad_request)?.trim();
    if s == "*" {
        return Ok(None);
    }
    let s = s.strip_prefix("W/").unwrap_or(s).trim_matches('"');
    s.parse().map(Some).map_err(|_| bad_request("If-Match must be a revision tag"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_scene(State(s): State<AppStateRef>, body: Bytes) -> ApiResult<Response> {
    let scene = load_scene(&body).map_err(bad_request)?;
    let rec = blocking(move || Ok(s.store.create_scene(scene)?)).await?;
    Ok(scene_response(StatusCode::CREATED, rec))
}

async fn list_scenes(State(s): State<AppStateRef>) -> ApiResult<Json<serde_json::Value>> {
    let recs = blocking(move || Ok(s.store.list_scenes()?)).await?;
    let items: Vec<_> = recs.iter().map(|r| json!({ "id": r.id, "revision": r.revision })).collect();
    Ok(Json(json!({ "scenes": items })))
}

async fn get_scene(State(s): State<AppStateRef>, Path(id): Path<String>) -> ApiResult<Response> {
    let rec = blocking(move || Ok(s.store.get_scene(&id)?)).await?;
    Ok(scene_response(StatusCode::OK, rec))
}

async fn update_scene(
    State(s): State<AppStateRef>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let expected = if_match(&headers)?;
    let scene = load_scene(&body).map_err(bad_request)?;
    let rec = blocking(move || Ok(s.store.update_scene(&id, scene, expected)?)).await?;
    Ok(scene_response(StatusCode::OK, rec))
}

#[derive(Deserialize)]
struct DeleteQuery {
    #[serde(default)]
    confirm: bool,
}

async fn delete_scene(
    State(s): State<AppStateRef>,
    Path(id): Path<String>,
    Query(q): Query<DeleteQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let state = s.clone();
    let jobs_of_scene = id.clone();
    // Running jobs keep their own copy of the scene; they are cancelled first.
    if q.confirm {
        let live: Vec<String> = state
            .handles
            .lock()
            .expect("poisoned")
            .iter()
            .filter(|(_, h)| h.job().request.scene_id == jobs_of_scene)
            .map(|(k, _)| k.clone())
            .collect();
        for job in live {
            state.cancel(&job)?;
        }
    }
    let removed = blocking(move || Ok(s.store.delete_scene(&id, q.confirm)?)).await?;
    Ok(Json(json!({ "deleted_jobs": removed })))
}

async fn submit_job(State(s): State<AppStateRef>, body: Bytes) -> ApiResult<Response> {
    let req: JobRequest = serde_json::from_slice(&body).map_err(bad_request)?;
    let store_state = s.clone();
    let scene_id = req.scene_id.clone();
    let rec = blocking(move || Ok(store_state.store.get_scene(&scene_id)?)).await?;
    validate_request(&req).map_err(bad_request)?;
    let job = Job {
        id: new_id(),
        kind: req.kind,
        status: JobStatus::Queued,
        progress: 0.0,
        reason: None,
        scene_revision: rec.revision,
        request: req,
        result: None,
    };
    let job = s.submit(job, rec.scene).map_err(|e| match e {
        SubmitError::QueueFull => ApiError(StatusCode::TOO_MANY_REQUESTS, "job queue is full".into()),
        SubmitError::Store(e) => e.into(),
    })?;
    let loc = HeaderValue::from_str(&format!("/api/v1/jobs/{}", job.id)).expect("ascii id");
    Ok((StatusCode::ACCEPTED, [(header::LOCATION, loc)], Json(job)).into_response())
}

async fn list_jobs(State(s): State<AppStateRef>) -> ApiResult<Json<serde_json::Value>> {
    let state = s.clone();
    let stored = blocking(move || Ok(state.store.list_jobs()?)).await?;
    let jobs: Vec<Job> = stored.into_iter().map(|j| s.job(&j.id).unwrap_or(j)).collect();
    Ok(Json(json!({ "jobs": jobs })))
}

async fn get_job(State(s): State<AppStateRef>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    Ok(Json(blocking(move || Ok(s.job(&id)?)).await?))
}

async fn cancel_job(State(s): State<AppStateRef>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    match blocking(move || Ok(s.cancel(&id)?)).await? {
        Some(job) => Ok(Json(job)),
        None => Err(ApiError(StatusCode::CONFLICT, "job already finished".into())),
    }
}

async fn get_result(State(s): State<AppStateRef>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blocking(move || {
        let job = s.job(&id)?;
        match (job.status, job.result) {
            (JobStatus::Done, Some(hash)) => Ok(s.store.get_result(&hash)?),
            (status, _) => Err(ApiError(StatusCode::CONFLICT, format!("job is {}", status_name(status)))),
        }
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

fn status_name(s: JobStatus) -> &'static str {
    match s {
        JobStatus::Queued => "queued",
        JobStatus::Running => "running",
        JobStatus::Done => "done",
        JobStatus::Failed => "failed",
    }
}

fn event_of(snap: &JobSnapshot) -> Event {
    let name = if snap.status.is_finished() { status_name(snap.status) } else { "progress" };
    Event::default().event(name).json_data(snap).expect("snapshot serializes")
}

/// Progress events while the job is live, at least once per second, and
/// one final `done` or `failed` event.
async fn job_events(
    State(s): State<AppStateRef>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let live = s.handle(&id);
    let finished = match &live {
        Some(_) => None,
        None => {
            let state = s.clone();
            let job = blocking(move || Ok(state.store.get_job(&id)?)).await?;
            Some(JobSnapshot::of(&job))
        }
    };
    let rx = live.as_ref().map(|h| h.subscribe());
    let stream = stream::unfold((live, rx, finished, false), |(live, mut rx, finished, ended)| async move {
        if ended {
            return None;
        }
        let snap = match (&mut rx, &finished) {
            (Some(rx), _) => rx.borrow_and_update().clone(),
            (None, Some(s)) => s.clone(),
            (None, None) => return None,
        };
        let terminal = snap.status.is_finished();
        if !terminal {
            if let Some(rx) = &mut rx {
                let _ = tokio::time::timeout(EVENT_INTERVAL, rx.changed()).await;
            }
        }
        Some((Ok(event_of(&snap)), (live, rx, finished, terminal)))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
