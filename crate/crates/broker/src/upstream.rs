//! [`TokenEndpoint`] over HTTP: form-encoded POST to `{issuer}/token`,
//! GET `{issuer}/jwks`.

use async_trait::async_trait;
use gridtoken_core::oauth::{
    OAuthErrorBody, TokenEndpoint, TokenRequest, TokenResponse, UpstreamError,
};
use gridtoken_core::KeySet;

#[derive(Clone, Default)]
pub struct HttpTokenEndpoint {
    http: reqwest::Client,
}

impl HttpTokenEndpoint {
    pub fn new() -> Self {
        Self::default()
    }
}

fn unreachable(e: reqwest::Error) -> UpstreamError {
    UpstreamError::Unreachable(e.without_url().to_string())
}

#[async_trait]
impl TokenEndpoint for HttpTokenEndpoint {
    async fn token(
        &self,
        issuer_url: &str,
        request: TokenRequest,
    ) -> Result<TokenResponse, UpstreamError> {
        let url = format!("{}/token", issuer_url.trim_end_matches('/'));
        let resp = self
            .http
            .post(url)
            .form(&request)
            .send()
            .await
            .map_err(unreachable)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(unreachable)?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| {
                UpstreamError::Unreachable(format!("unparseable token response: {e}"))
            });
        }
        if status.is_server_error() {
            return Err(UpstreamError::Unreachable(format!(
                "issuer answered {status}"
            )));
        }
        Err(UpstreamError::Rejected(
            serde_json::from_slice(&bytes).unwrap_or_else(|_| {
                OAuthErrorBody::new("server_error", format!("issuer answered {status}"))
            }),
        ))
    }

    async fn jwks(&self, issuer_url: &str) -> Result<KeySet, UpstreamError> {
        let url = format!("{}/jwks", issuer_url.trim_end_matches('/'));
        let resp = self.http.get(url).send().await.map_err(unreachable)?;
        let status = resp.status();
        let text = resp.text().await.map_err(unreachable)?;
        if !status.is_success() {
            return Err(UpstreamError::Rejected(OAuthErrorBody::new(
                "not_found",
                format!("jwks answered {status}"),
            )));
        }
        KeySet::from_json(&text).map_err(|e| UpstreamError::Unreachable(format!("bad jwks: {e}")))
    }
}
