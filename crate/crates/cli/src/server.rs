//! HTTP front end over a read-only dataset.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use finegrain_core::methods::Dataset;

use crate::api::{self, ApiError, AttributeRequest};
use crate::config::Settings;

#[derive(Clone)]
pub struct AppState {
    pub dataset: Arc<Dataset>,
    pub settings: Settings,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/instances", get(list_instances))
        .route("/instances/{id}", get(get_instance))
        .route("/instances/{id}/attribute", post(attribute))
        .with_state(state)
}

async fn healthz(State(state): State<AppState>) -> Response {
    Json(serde_json::json!({ "status": "ok", "instances": state.dataset.len() })).into_response()
}

async fn list_instances(State(state): State<AppState>) -> Response {
    let list: Vec<api::InstanceSummary> = state.dataset.bundles().map(|b| api::summarize(b)).collect();
    Json(list).into_response()
}

async fn get_instance(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bundle = state.dataset.get(&id).ok_or(ApiError::NotFound(id))?;
    Ok(Json(api::detail(bundle)).into_response())
}

async fn attribute(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    if state.dataset.get(&id).is_none() {
        return Err(ApiError::NotFound(id));
    }
    let req: AttributeRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid("body", e.to_string()))?;
    let resp = tokio::task::spawn_blocking(move || {
        api::attribute(&state.dataset, &id, &req, &state.settings).map(|r| api::render(&r))
    })
    .await
    .map_err(|e| ApiError::Engine(finegrain_core::Error::Internal(e.to_string())))??;
    Ok(json_text(resp))
}

/// Serves `state` on `addr` until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, instances = state.dataset.len(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
