use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::error::{Result, ServiceError};
use crate::service::{LabelAck, LabelSubmission, PendingQuery, PublicReport, Service, Status};

#[derive(Debug, Deserialize)]
struct CycleParam {
    cycle: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Submissions {
    One(LabelSubmission),
    Many(Vec<LabelSubmission>),
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl ServiceError {
    fn status_and_kind(&self) -> (StatusCode, &'static str) {
        match self {
            ServiceError::Core(ads_core::Error::NotPending(_)) => {
                (StatusCode::CONFLICT, "not_pending")
            }
            ServiceError::Core(ads_core::Error::BadLabel(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "bad_label")
            }
            ServiceError::UnknownCycle(_) => (StatusCode::NOT_FOUND, "unknown_cycle"),
            ServiceError::NotFinished => (StatusCode::CONFLICT, "not_finished"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = self.status_and_kind();
        let body = ErrorBody {
            error: kind,
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

/// Routes of the annotation API.
pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/queries", get(queries))
        .route("/labels", post(labels))
        .route("/report", get(report))
        .route("/scores", get(scores))
        .with_state(service)
}

/// Binds a listener, mapping failures to [`ServiceError::BindFailure`].
pub async fn bind(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::BindFailure { addr, source })
}

/// Serves the API on `listener` until `shutdown` completes.
pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

async fn status(State(service): State<Arc<Service>>) -> Json<Status> {
    Json(service.status())
}

async fn queries(
    State(service): State<Arc<Service>>,
    Query(param): Query<CycleParam>,
) -> Result<Json<Vec<PendingQuery>>> {
    service.queries(param.cycle).map(Json)
}

async fn labels(State(service): State<Arc<Service>>, body: Bytes) -> Result<Json<LabelAck>> {
    let submissions = match serde_json::from_slice::<Submissions>(&body) {
        Ok(Submissions::One(s)) => vec![s],
        Ok(Submissions::Many(list)) => list,
        Err(e) => return Err(ServiceError::BadRequest(e.to_string())),
    };
    service.submit(&submissions).map(Json)
}

async fn report(State(service): State<Arc<Service>>) -> Result<Json<PublicReport>> {
    service.report().map(Json)
}

async fn scores(
    State(service): State<Arc<Service>>,
    Query(param): Query<CycleParam>,
) -> Result<Json<ads_core::experiment::ScoreTable>> {
    let cycle = param
        .cycle
        .ok_or_else(|| ServiceError::BadRequest("the cycle parameter is required".into()))?;
    service.scores(cycle).map(Json)
}
