//! HTTP+JSON routes.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridtoken_core::secret::SecretString;
use gridtoken_core::trust::bearer_from_header;
use serde::Deserialize;

use crate::api::{
    BeginRequest, BrokerError, ErrorCode, ExchangeOptions, Health, RenewRequest, RobotRequest,
};
use crate::service::{Broker, CALLBACK_PATH};

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/v1/auth/oidc/begin", post(begin))
        .route("/v1/auth/oidc/poll/{handle}", get(poll))
        .route(CALLBACK_PATH, get(callback))
        .route("/v1/auth/secondary", post(secondary))
        .route("/v1/token/exchange", post(exchange))
        .route("/v1/admin/robot", post(robot))
        .route("/v1/admin/config", post(config))
        .route("/v1/health", get(health))
        .with_state(broker)
}

impl IntoResponse for BrokerError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut resp = (status, Json(&self)).into_response();
        if let Some(secs) = self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

fn bearer(headers: &HeaderMap) -> Result<SecretString, BrokerError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(bearer_from_header)
        .map(SecretString::new)
        .ok_or_else(|| BrokerError::new(ErrorCode::Unauthenticated, "bearer token required"))
}

fn json<T: serde::Serialize>(r: Result<T, BrokerError>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn begin(State(b): State<Arc<Broker>>, Json(req): Json<BeginRequest>) -> Response {
    json(b.begin(&req))
}

async fn poll(State(b): State<Arc<Broker>>, Path(handle): Path<String>) -> Response {
    json(b.poll(&SecretString::new(handle)).await)
}

#[derive(Debug, Deserialize)]
struct CallbackQuery {
    state: String,
    #[serde(default)]
    code: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

async fn callback(State(b): State<Arc<Broker>>, Query(q): Query<CallbackQuery>) -> Response {
    match b.callback(&q.state, q.code.as_deref(), q.error.as_deref()) {
        Ok(()) => {
            Html("<!doctype html><p>Authentication complete. You may close this window.</p>\n")
                .into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn secondary(State(b): State<Arc<Broker>>, Json(req): Json<RenewRequest>) -> Response {
    json(b.renew(&req).await)
}

async fn exchange(
    State(b): State<Arc<Broker>>,
    headers: HeaderMap,
    body: Option<Json<ExchangeOptions>>,
) -> Response {
    let token = match bearer(&headers) {
        Ok(t) => t,
        Err(e) => return e.into_response(),
    };
    let opts = body.map(|Json(o)| o).unwrap_or_default();
    json(b.exchange(&token, &opts).await)
}

async fn robot(
    State(b): State<Arc<Broker>>,
    headers: HeaderMap,
    Json(req): Json<RobotRequest>,
) -> Response {
    match bearer(&headers) {
        Ok(admin) => json(b.store_for_robot(&admin, &req)),
        Err(e) => e.into_response(),
    }
}

async fn config(State(b): State<Arc<Broker>>, headers: HeaderMap, body: String) -> Response {
    match bearer(&headers) {
        Ok(admin) => json(b.apply_config_as(&admin, &body)),
        Err(e) => e.into_response(),
    }
}

async fn health(State(b): State<Arc<Broker>>) -> Response {
    Json(Health {
        status: "ok".into(),
        experiments: b.config().experiments.len(),
    })
    .into_response()
}
