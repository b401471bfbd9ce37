//! HTTP surface. Each issuer name is a path prefix:
//! `/{issuer}/.well-known/openid-configuration`, `/{issuer}/jwks`,
//! `/{issuer}/authorize` (GET consent page, POST decision) and
//! `/{issuer}/token`.

use std::sync::Arc;

use axum::extract::{Form, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridtoken_core::oauth::{error_code, OAuthErrorBody, TokenRequest};
use serde::Deserialize;
use url::Url;

use crate::consent::consent_page;
use crate::service::{AuthorizeRequest, IssuerError, IssuerService};

pub fn router(svc: Arc<IssuerService>) -> Router {
    Router::new()
        .route("/{issuer}/.well-known/openid-configuration", get(discovery))
        .route("/{issuer}/jwks", get(jwks))
        .route(
            "/{issuer}/authorize",
            get(authorize_page).post(authorize_decision),
        )
        .route("/{issuer}/token", post(token))
        .with_state(svc)
}

fn oauth_error(status: StatusCode, body: OAuthErrorBody) -> Response {
    (status, Json(body)).into_response()
}

fn issuer_error(e: IssuerError) -> Response {
    let status = match e {
        IssuerError::UnknownIssuer(_) => StatusCode::NOT_FOUND,
        IssuerError::UnknownClient(_) => StatusCode::UNAUTHORIZED,
        IssuerError::NotAuthorized { .. } | IssuerError::ConsentDenied => StatusCode::FORBIDDEN,
        _ => StatusCode::BAD_REQUEST,
    };
    oauth_error(status, OAuthErrorBody::new(e.oauth_code(), e.to_string()))
}

async fn discovery(State(svc): State<Arc<IssuerService>>, Path(issuer): Path<String>) -> Response {
    match svc.discovery(&issuer) {
        Ok(doc) => Json(doc).into_response(),
        Err(e) => issuer_error(e),
    }
}

async fn jwks(State(svc): State<Arc<IssuerService>>, Path(issuer): Path<String>) -> Response {
    match svc.jwks(&issuer) {
        Ok(keys) => (
            [(header::CONTENT_TYPE, "application/jwk-set+json")],
            keys.to_json(),
        )
            .into_response(),
        Err(e) => issuer_error(e),
    }
}

#[derive(Debug, Deserialize)]
pub struct AuthorizeQuery {
    #[serde(default)]
    pub response_type: Option<String>,
    pub client_id: String,
    #[serde(default)]
    pub redirect_uri: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    pub experiment: String,
    pub role: String,
    #[serde(default)]
    pub login_hint: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct DecisionForm {
    pub client_id: String,
    #[serde(default)]
    pub redirect_uri: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    pub experiment: String,
    pub role: String,
    pub login: String,
    pub decision: String,
}

/// Send the browser back to the client with either a code or an error.
fn finish(
    redirect_uri: Option<&str>,
    state: Option<&str>,
    outcome: Result<String, IssuerError>,
) -> Response {
    let Some(target) = redirect_uri else {
        return match outcome {
            Ok(code) => {
                Html(format!("<p>Authorization code: <code>{code}</code></p>")).into_response()
            }
            Err(e) => issuer_error(e),
        };
    };
    let Ok(mut url) = Url::parse(target) else {
        return issuer_error(IssuerError::BadRedirect);
    };
    {
        let mut q = url.query_pairs_mut();
        match &outcome {
            Ok(code) => {
                q.append_pair("code", code);
            }
            Err(e) => {
                q.append_pair("error", e.oauth_code());
                q.append_pair("error_description", &e.to_string());
            }
        }
        if let Some(s) = state {
            q.append_pair("state", s);
        }
    }
    Redirect::to(url.as_str()).into_response()
}

async fn authorize_page(
    State(svc): State<Arc<IssuerService>>,
    Path(issuer): Path<String>,
    Query(q): Query<AuthorizeQuery>,
) -> Response {
    if q.response_type.as_deref().is_some_and(|t| t != "code") {
        return oauth_error(
            StatusCode::BAD_REQUEST,
            OAuthErrorBody::new("unsupported_response_type", "only `code` is supported"),
        );
    }
    if let Err(e) = svc.check_client(
        &issuer,
        &q.client_id,
        q.redirect_uri.as_deref(),
        &q.experiment,
        &q.role,
    ) {
        return issuer_error(e);
    }
    if let (true, Some(login)) = (svc.auto_approve(), q.login_hint.as_deref()) {
        let outcome = svc.authorize(&AuthorizeRequest {
            issuer,
            client_id: q.client_id.clone(),
            redirect_uri: q.redirect_uri.clone(),
            experiment: q.experiment.clone(),
            role: q.role.clone(),
            principal: login.to_string(),
            approve: true,
        });
        return finish(q.redirect_uri.as_deref(), q.state.as_deref(), outcome);
    }
    Html(consent_page(&issuer, &q)).into_response()
}

async fn authorize_decision(
    State(svc): State<Arc<IssuerService>>,
    Path(issuer): Path<String>,
    Form(f): Form<DecisionForm>,
) -> Response {
    let approve = match f.decision.as_str() {
        "approve" => true,
        "deny" => false,
        _ => {
            return oauth_error(
                StatusCode::BAD_REQUEST,
                OAuthErrorBody::new(
                    error_code::INVALID_REQUEST,
                    "decision must be approve or deny",
                ),
            )
        }
    };
    let outcome = svc.authorize(&AuthorizeRequest {
        issuer,
        client_id: f.client_id.clone(),
        redirect_uri: f.redirect_uri.clone(),
        experiment: f.experiment.clone(),
        role: f.role.clone(),
        principal: f.login.clone(),
        approve,
    });
    if let Err(
        e @ (IssuerError::UnknownIssuer(_)
        | IssuerError::UnknownClient(_)
        | IssuerError::BadRedirect),
    ) = outcome
    {
        return issuer_error(e);
    }
    finish(f.redirect_uri.as_deref(), f.state.as_deref(), outcome)
}

async fn token(
    State(svc): State<Arc<IssuerService>>,
    Path(issuer): Path<String>,
    Form(req): Form<TokenRequest>,
) -> Response {
    match svc.token(&issuer, &req) {
        Ok(resp) => ([(header::CACHE_CONTROL, "no-store")], Json(resp)).into_response(),
        Err(body) => {
            let status = match body.error.as_str() {
                error_code::INVALID_CLIENT => StatusCode::UNAUTHORIZED,
                error_code::NOT_FOUND => StatusCode::NOT_FOUND,
                _ => StatusCode::BAD_REQUEST,
            };
            oauth_error(status, body)
        }
    }
}
