//! HTTP+JSON routes.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridtoken_core::ManualClock;
use serde::Deserialize;

use crate::error::CredStoreError;
use crate::service::{CredStore, JobRegistration, StoreRequest};

#[derive(Clone)]
struct AppState {
    store: Arc<CredStore>,
    driver: Option<ManualClock>,
}

/// Routes for `store`. With a `driver`, POST /v1/cycle may set the clock.
pub fn router(store: Arc<CredStore>, driver: Option<ManualClock>) -> Router {
    Router::new()
        .route("/v1/creds", post(creds))
        .route("/v1/jobs", post(jobs))
        .route("/v1/cycle", post(cycle))
        .route("/v1/report", get(report))
        .with_state(AppState { store, driver })
}

impl IntoResponse for CredStoreError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.to_body())).into_response()
    }
}

fn json<T: serde::Serialize>(r: Result<T, CredStoreError>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn creds(State(s): State<AppState>, Json(req): Json<StoreRequest>) -> Response {
    json(s.store.store_credential(&req).await)
}

async fn jobs(State(s): State<AppState>, Json(reg): Json<JobRegistration>) -> Response {
    json(s.store.attach_job(reg).await)
}

#[derive(Deserialize, Default)]
struct CycleRequest {
    #[serde(default)]
    now: Option<i64>,
}

async fn cycle(State(s): State<AppState>, body: Option<Json<CycleRequest>>) -> Response {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    if let Some(now) = req.now {
        match &s.driver {
            Some(clock) => clock.set(now),
            None => {
                return CredStoreError::InvalidRequest("this store runs on the system clock".into())
                    .into_response()
            }
        }
    }
    Json(s.store.refresh_cycle().await).into_response()
}

async fn report(State(s): State<AppState>) -> Response {
    match s.store.last_report() {
        Some(r) => Json(r).into_response(),
        None => CredStoreError::NoReport.into_response(),
    }
}
