//! [`CredStoreApi`]: the store side robot managers and submit hosts talk to.

use std::sync::Arc;

use async_trait::async_trait;
use reqwest::RequestBuilder;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CredStoreError, ErrorBody};
use crate::service::{Attached, CredStore, CycleReport, JobRegistration, StoreAck, StoreRequest};

#[async_trait]
pub trait CredStoreApi: Send + Sync {
    async fn store(&self, req: StoreRequest) -> Result<StoreAck, CredStoreError>;
    async fn attach(&self, reg: JobRegistration) -> Result<Attached, CredStoreError>;
}

#[async_trait]
impl CredStoreApi for CredStore {
    async fn store(&self, req: StoreRequest) -> Result<StoreAck, CredStoreError> {
        self.store_credential(&req).await
    }

    async fn attach(&self, reg: JobRegistration) -> Result<Attached, CredStoreError> {
        self.attach_job(reg).await
    }
}

#[async_trait]
impl<T: CredStoreApi + ?Sized> CredStoreApi for Arc<T> {
    async fn store(&self, req: StoreRequest) -> Result<StoreAck, CredStoreError> {
        (**self).store(req).await
    }

    async fn attach(&self, reg: JobRegistration) -> Result<Attached, CredStoreError> {
        (**self).attach(reg).await
    }
}

#[derive(Serialize)]
struct CycleRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    now: Option<i64>,
}

pub struct HttpCredStore {
    base: String,
    http: reqwest::Client,
}

impl HttpCredStore {
    pub fn new(base: impl Into<String>) -> Self {
        HttpCredStore {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, CredStoreError> {
        let unreachable =
            |e: reqwest::Error| CredStoreError::Unreachable(e.without_url().to_string());
        let resp = req.send().await.map_err(unreachable)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(unreachable)?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| CredStoreError::Remote {
                code: "bad_response".into(),
                message: e.to_string(),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(CredStoreError::from_body(body)),
            Err(_) if status.is_server_error() => Err(CredStoreError::Unreachable(format!(
                "store answered {status}"
            ))),
            Err(_) => Err(CredStoreError::Remote {
                code: "http_error".into(),
                message: format!("store answered {status}"),
            }),
        }
    }

    /// Run one refresh cycle; `now` moves a driven clock first.
    pub async fn cycle(&self, now: Option<i64>) -> Result<CycleReport, CredStoreError> {
        self.send(
            self.http
                .post(self.url("/v1/cycle"))
                .json(&CycleRequest { now }),
        )
        .await
    }

    pub async fn report(&self) -> Result<CycleReport, CredStoreError> {
        self.send(self.http.get(self.url("/v1/report"))).await
    }
}

#[async_trait]
impl CredStoreApi for HttpCredStore {
    async fn store(&self, req: StoreRequest) -> Result<StoreAck, CredStoreError> {
        self.send(self.http.post(self.url("/v1/creds")).json(&req))
            .await
    }

    async fn attach(&self, reg: JobRegistration) -> Result<Attached, CredStoreError> {
        self.send(self.http.post(self.url("/v1/jobs")).json(&reg))
            .await
    }
}
