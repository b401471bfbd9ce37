//! Mock code-publication endpoint: accepts tarballs from any bearer of a
//! `compute.create` token minted by one of its configured issuers.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridtoken_core::trust::bearer_from_header;
use gridtoken_core::{Authz, Decision, Scope, SharedClock, TrustedIssuers};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REPOSITORY: &str = "/cvmfs/rcds.test/sw";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Published {
    pub cid: String,
    pub path: String,
    pub publisher: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refusal {
    pub error: String,
    pub message: String,
}

pub struct Rcds {
    trusted: RwLock<TrustedIssuers>,
    clock: SharedClock,
    published: Mutex<BTreeMap<String, Published>>,
}

impl Rcds {
    pub fn new(trusted: TrustedIssuers, clock: SharedClock) -> Self {
        Rcds {
            trusted: RwLock::new(trusted),
            clock,
            published: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn set_trusted(&self, trusted: TrustedIssuers) {
        *self.trusted.write().expect("trust lock") = trusted;
    }

    pub fn published(&self) -> Vec<Published> {
        self.published
            .lock()
            .expect("publish lock")
            .values()
            .cloned()
            .collect()
    }

    /// Check the bearer and record the tarball.
    pub fn publish(&self, token: &str, tarball: &[u8]) -> Result<Published, Refusal> {
        let required = Scope::bare(Authz::ComputeCreate);
        let decision =
            self.trusted
                .read()
                .expect("trust lock")
                .authorize(token, &required, self.clock.now());
        match decision {
            Decision::Allow(claims) => {
                let cid = hex::encode(Sha256::digest(tarball));
                let rec = Published {
                    path: format!("{REPOSITORY}/{cid}"),
                    cid: cid.clone(),
                    publisher: claims.sub,
                };
                self.published
                    .lock()
                    .expect("publish lock")
                    .insert(cid, rec.clone());
                Ok(rec)
            }
            Decision::Deny(reason) => Err(Refusal {
                error: reason.code().into(),
                message: reason.to_string(),
            }),
        }
    }
}

pub fn router(rcds: Arc<Rcds>) -> Router {
    Router::new()
        .route("/pubapi/publish", post(publish))
        .route("/pubapi/published", get(list))
        .with_state(rcds)
}

async fn publish(State(rcds): State<Arc<Rcds>>, headers: HeaderMap, body: Bytes) -> Response {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(bearer_from_header);
    let Some(token) = token else {
        let r = Refusal {
            error: "missing_token".into(),
            message: "bearer token required".into(),
        };
        return (StatusCode::UNAUTHORIZED, Json(r)).into_response();
    };
    match rcds.publish(token, &body) {
        Ok(p) => Json(p).into_response(),
        Err(r) => (StatusCode::FORBIDDEN, Json(r)).into_response(),
    }
}

async fn list(State(rcds): State<Arc<Rcds>>) -> Json<Vec<Published>> {
    Json(rcds.published())
}
