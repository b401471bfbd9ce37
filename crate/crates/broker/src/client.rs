//! [`BrokerApi`] implementations: in-process and over HTTP.

use std::sync::Arc;

use async_trait::async_trait;
use gridtoken_core::secret::SecretString;
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;

use crate::api::{
    AccessToken, AuthSession, BeginRequest, BrokerApi, BrokerError, BrokerTokenGrant, ErrorCode,
    ExchangeOptions, Health, PollResponse, RenewRequest, RobotRequest, RobotResponse,
};
use crate::config::ChangeReport;
use crate::service::Broker;

pub struct LocalBroker(pub Arc<Broker>);

#[async_trait]
impl BrokerApi for LocalBroker {
    async fn begin(&self, req: BeginRequest) -> Result<AuthSession, BrokerError> {
        self.0.begin(&req)
    }

    async fn poll(&self, handle: &SecretString) -> Result<PollResponse, BrokerError> {
        self.0.poll(handle).await
    }

    async fn renew(&self, req: RenewRequest) -> Result<BrokerTokenGrant, BrokerError> {
        self.0.renew(&req).await
    }

    async fn exchange(
        &self,
        token: &SecretString,
        opts: ExchangeOptions,
    ) -> Result<AccessToken, BrokerError> {
        self.0.exchange(token, &opts).await
    }

    async fn store_for_robot(
        &self,
        admin: &SecretString,
        req: RobotRequest,
    ) -> Result<RobotResponse, BrokerError> {
        self.0.store_for_robot(admin, &req)
    }

    async fn apply_config(
        &self,
        admin: &SecretString,
        document: &str,
    ) -> Result<ChangeReport, BrokerError> {
        self.0.apply_config_as(admin, document)
    }

    async fn health(&self) -> Result<Health, BrokerError> {
        Ok(Health {
            status: "ok".into(),
            experiments: self.0.config().experiments.len(),
        })
    }
}

pub struct HttpBroker {
    base: String,
    http: reqwest::Client,
}

impl HttpBroker {
    pub fn new(base: impl Into<String>) -> Self {
        HttpBroker {
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

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, BrokerError> {
        let resp = req
            .send()
            .await
            .map_err(|e| BrokerError::new(ErrorCode::BrokerUnreachable, e.to_string()))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| BrokerError::new(ErrorCode::BrokerUnreachable, e.to_string()))?;
        if status == StatusCode::OK {
            return serde_json::from_slice(&bytes).map_err(|e| {
                BrokerError::new(
                    ErrorCode::UpstreamError,
                    format!("bad broker response: {e}"),
                )
            });
        }
        Err(
            serde_json::from_slice::<BrokerError>(&bytes).unwrap_or_else(|_| {
                let code = if status.is_server_error() {
                    ErrorCode::BrokerUnreachable
                } else {
                    ErrorCode::InvalidRequest
                };
                BrokerError::new(code, format!("broker answered {status}"))
            }),
        )
    }
}

#[async_trait]
impl BrokerApi for HttpBroker {
    async fn begin(&self, req: BeginRequest) -> Result<AuthSession, BrokerError> {
        self.send(self.http.post(self.url("/v1/auth/oidc/begin")).json(&req))
            .await
    }

    async fn poll(&self, handle: &SecretString) -> Result<PollResponse, BrokerError> {
        let url = self.url(&format!("/v1/auth/oidc/poll/{}", handle.expose()));
        self.send(self.http.get(url)).await
    }

    async fn renew(&self, req: RenewRequest) -> Result<BrokerTokenGrant, BrokerError> {
        self.send(self.http.post(self.url("/v1/auth/secondary")).json(&req))
            .await
    }

    async fn exchange(
        &self,
        token: &SecretString,
        opts: ExchangeOptions,
    ) -> Result<AccessToken, BrokerError> {
        self.send(
            self.http
                .post(self.url("/v1/token/exchange"))
                .bearer_auth(token.expose())
                .json(&opts),
        )
        .await
    }

    async fn store_for_robot(
        &self,
        admin: &SecretString,
        req: RobotRequest,
    ) -> Result<RobotResponse, BrokerError> {
        self.send(
            self.http
                .post(self.url("/v1/admin/robot"))
                .bearer_auth(admin.expose())
                .json(&req),
        )
        .await
    }

    async fn apply_config(
        &self,
        admin: &SecretString,
        document: &str,
    ) -> Result<ChangeReport, BrokerError> {
        self.send(
            self.http
                .post(self.url("/v1/admin/config"))
                .bearer_auth(admin.expose())
                .body(document.to_string()),
        )
        .await
    }

    async fn health(&self) -> Result<Health, BrokerError> {
        self.send(self.http.get(self.url("/v1/health"))).await
    }
}
