//! HTTP+JSON API: `POST /change`, `GET /directory`, `GET /configs`.
//!
//! Reads are open. Changes need a bearer access token from a trusted issuer
//! carrying the configured admin scope.

use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridtoken_core::scope::Scope;
use gridtoken_core::trust::bearer_from_header;
use gridtoken_core::{Decision, SharedClock, TrustedIssuers};
use serde_json::json;

use crate::authorize_api;
use crate::model::Change;
use crate::service::{Registry, ServiceError};

pub const SERIAL_HEADER: &str = "x-registry-serial";

pub struct ApiState {
    pub registry: Arc<Registry>,
    pub trusted: RwLock<TrustedIssuers>,
    pub admin_scope: Scope,
    pub clock: SharedClock,
}

impl ApiState {
    pub fn new(
        registry: Arc<Registry>,
        trusted: TrustedIssuers,
        admin_scope: Scope,
        clock: SharedClock,
    ) -> Self {
        ApiState {
            registry,
            trusted: RwLock::new(trusted),
            admin_scope,
            clock,
        }
    }

    pub fn set_trusted(&self, trusted: TrustedIssuers) {
        *self.trusted.write().expect("trust lock") = trusted;
    }
}

pub fn router(state: Arc<ApiState>) -> Router {
    Router::new()
        .route("/change", post(post_change))
        .route("/directory", get(get_directory))
        .route("/configs", get(get_configs))
        .with_state(state)
}

fn error(status: StatusCode, code: &str, description: impl Into<String>) -> Response {
    (
        status,
        Json(json!({ "error": code, "error_description": description.into() })),
    )
        .into_response()
}

fn canonical_body(serial: u64, body: String) -> Response {
    let mut resp = (StatusCode::OK, body).into_response();
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    resp.headers_mut()
        .insert(SERIAL_HEADER, HeaderValue::from(serial));
    resp
}

async fn post_change(
    State(state): State<Arc<ApiState>>,
    headers: HeaderMap,
    body: String,
) -> Response {
    let Some(token) = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(bearer_from_header)
    else {
        return error(
            StatusCode::UNAUTHORIZED,
            "missing_token",
            "bearer access token required",
        );
    };
    let decision = {
        let trusted = state.trusted.read().expect("trust lock");
        authorize_api(token, &state.admin_scope, &trusted, state.clock.now())
    };
    let claims = match decision {
        Decision::Allow(c) => c,
        Decision::Deny(reason) => {
            return error(StatusCode::FORBIDDEN, reason.code(), reason.to_string())
        }
    };
    let change: Change = match serde_json::from_str(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()),
    };
    match state.registry.apply(&change) {
        Ok(serial) => {
            tracing::info!(sub = %claims.sub, serial, "registry change applied");
            let mut resp = Json(json!({ "serial": serial })).into_response();
            resp.headers_mut()
                .insert(SERIAL_HEADER, HeaderValue::from(serial));
            resp
        }
        Err(ServiceError::Registry(e)) => {
            error(StatusCode::CONFLICT, "rejected_change", e.to_string())
        }
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            "store_failure",
            e.to_string(),
        ),
    }
}

async fn get_directory(State(state): State<Arc<ApiState>>) -> Response {
    let doc = state.registry.directory();
    canonical_body(doc.serial, doc.to_canonical_json())
}

async fn get_configs(State(state): State<Arc<ApiState>>) -> Response {
    let cfg = state.registry.configs();
    canonical_body(cfg.serial, cfg.to_canonical_json())
}
