//! HTTP control API for active-learning runs.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/configs/validate` | resolve and validate a config without starting a run |
//! | POST | `/v1/runs` | create and start a run |
//! | GET | `/v1/runs` | list runs |
//! | GET | `/v1/runs/{id}` | status, progress and spend |
//! | GET | `/v1/runs/{id}/curve` | one record per finished round |
//! | GET | `/v1/runs/{id}/tasks` | the human annotation queue |
//! | POST | `/v1/runs/{id}/tasks/claim` | lease the next task |
//! | POST | `/v1/runs/{id}/tasks/{task_id}/submit` | annotate or skip a claimed task |
//! | GET | `/v1/runs/{id}/annotations` | the annotation log as JSON lines |
//!
//! Every JSON document carries `schema_version`. Validation failures are 422
//! with one entry per offending field, named by its dotted config path.

mod error;
mod routes;
mod runs;

use std::sync::Arc;

pub use error::{ApiError, ErrorBody, ErrorDoc};
pub use routes::{ClaimRequest, SubmitRequest};
pub use runs::{CreateRun, InlineDataset, Registry, RunHandle, RunState, ServerOptions};

pub const SCHEMA_VERSION: u32 = 1;

pub fn router(options: ServerOptions) -> axum::Router {
    routes::router(Arc::new(Registry::new(options)))
}

pub async fn serve(listener: tokio::net::TcpListener, options: ServerOptions) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "control API listening");
    axum::serve(listener, router(options)).await
}
