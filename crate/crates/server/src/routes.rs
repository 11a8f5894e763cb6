use std::sync::Arc;

use alnlg_core::labeling::{AnnotationTask, HumanQueue, QueueCounts, SubmitAck, TaskStatus};
use alnlg_core::orchestrator::{IterationRecord, RunProgress, StopReason};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::runs::{CreateRun, Registry, RunHandle, RunState};
use crate::SCHEMA_VERSION;

type Shared = State<Arc<Registry>>;

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/v1/configs/validate", post(validate_config))
        .route("/v1/runs", post(create_run).get(list_runs))
        .route("/v1/runs/{id}", get(run_status))
        .route("/v1/runs/{id}/curve", get(run_curve))
        .route("/v1/runs/{id}/tasks", get(list_tasks))
        .route("/v1/runs/{id}/tasks/claim", post(claim_task))
        .route("/v1/runs/{id}/tasks/{task_id}/submit", post(submit_task))
        .route("/v1/runs/{id}/annotations", get(annotations))
        .with_state(registry)
}

/// Adds `schema_version` to a JSON object.
fn doc(status: StatusCode, mut v: Value) -> Response {
    v["schema_version"] = json!(SCHEMA_VERSION);
    (status, Json(v)).into_response()
}

/// Decodes a JSON body, reporting problems as a 422 on `body`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::field("body", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn validate_config(body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRun = parse(&body)?;
    let config = req.resolve()?;
    Ok(doc(StatusCode::OK, json!({ "config": config })))
}

#[derive(Debug, Serialize)]
struct RunStatus {
    run_id: String,
    state: RunState,
    #[serde(flatten)]
    progress: RunProgress,
    budget: Option<f64>,
    error: Option<String>,
    queue: Option<QueueCounts>,
}

fn status_of(run: &RunHandle) -> RunStatus {
    RunStatus {
        run_id: run.id.clone(),
        state: run.state(),
        progress: run.progress(),
        budget: run.config.al.budget,
        error: run.error(),
        queue: run.queue.as_ref().map(|q| q.counts()),
    }
}

async fn create_run(State(reg): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRun = parse(&body)?;
    let run = blocking(move || reg.launch(&req)).await?;
    let mut v = serde_json::to_value(status_of(&run)).expect("status serializes");
    v["config"] = run.config.to_json_value();
    Ok(doc(StatusCode::CREATED, v))
}

async fn list_runs(State(reg): Shared) -> Response {
    let runs: Vec<RunStatus> = reg.list().iter().map(|r| status_of(r)).collect();
    doc(StatusCode::OK, json!({ "runs": runs }))
}

async fn run_status(State(reg): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = reg.get(&id)?;
    Ok(doc(StatusCode::OK, serde_json::to_value(status_of(&run)).expect("status serializes")))
}

#[derive(Debug, Serialize)]
struct Curve {
    run_id: String,
    stop_reason: Option<StopReason>,
    points: Vec<IterationRecord>,
}

async fn run_curve(State(reg): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = reg.get(&id)?;
    let curve = Curve { run_id: run.id.clone(), stop_reason: run.progress().stop_reason, points: run.records() };
    Ok(doc(StatusCode::OK, serde_json::to_value(curve).expect("curve serializes")))
}

#[derive(Debug, Deserialize)]
struct TaskFilter {
    status: Option<TaskStatus>,
}

fn queue_of(run: &RunHandle) -> Result<Arc<HumanQueue>, ApiError> {
    run.queue.clone().ok_or_else(|| ApiError::Conflict(format!("run `{}` is not labelled by humans", run.id)))
}

async fn list_tasks(State(reg): Shared, Path(id): Path<String>, Query(f): Query<TaskFilter>) -> Result<Response, ApiError> {
    let run = reg.get(&id)?;
    let queue = queue_of(&run)?;
    let tasks: Vec<AnnotationTask> =
        queue.tasks().into_iter().filter(|t| f.status.is_none_or(|s| t.status == s)).collect();
    Ok(doc(StatusCode::OK, json!({ "counts": queue.counts(), "tasks": tasks })))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRequest {
    pub annotator: String,
}

/// A repeated claim by the same annotator returns the task they already hold.
/// `task` is null when nothing is pending.
async fn claim_task(State(reg): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: ClaimRequest = parse(&body)?;
    if req.annotator.trim().is_empty() {
        return Err(ApiError::field("annotator", "must not be empty"));
    }
    let run = reg.get(&id)?;
    let task = queue_of(&run)?.claim(req.annotator.trim());
    Ok(doc(StatusCode::OK, json!({ "task": task })))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub annotator: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub skip: bool,
    /// Also accepted as the `Idempotency-Key` header.
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

async fn submit_task(
    State(reg): Shared,
    Path((id, task_id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: SubmitRequest = parse(&body)?;
    if req.annotator.trim().is_empty() {
        return Err(ApiError::field("annotator", "must not be empty"));
    }
    let key = req
        .idempotency_key
        .clone()
        .or_else(|| headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string));
    let run = reg.get(&id)?;
    let queue = queue_of(&run)?;
    let ack: SubmitAck = blocking(move || {
        Ok(queue.submit(&task_id, req.annotator.trim(), &req.text, req.skip, key.as_deref())?)
    })
    .await?;
    Ok(doc(StatusCode::OK, serde_json::to_value(ack).expect("ack serializes")))
}

async fn annotations(State(reg): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = reg.get(&id)?;
    let body = run.log.to_jsonl();
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson")),
            (header::HeaderName::from_static("x-schema-version"), HeaderValue::from(SCHEMA_VERSION)),
        ],
        body,
    )
        .into_response())
}
