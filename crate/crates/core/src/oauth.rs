//! OAuth2 token-endpoint wire types and the upstream connector trait the
//! broker uses to reach issuers.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keys::KeySet;
use crate::secret::SecretString;

pub mod grant {
    pub const AUTHORIZATION_CODE: &str = "authorization_code";
    pub const REFRESH_TOKEN: &str = "refresh_token";
    /// Rotate a refresh token and extend it by a full lifetime.
    pub const REFRESH_RENEWAL: &str = "urn:gridtoken:params:grant-type:refresh-renewal";
}

/// Form body of `POST {issuer}/token`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRequest {
    pub grant_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_token: Option<SecretString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<String>,
    pub client_id: String,
    pub client_secret: SecretString,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redirect_uri: Option<String>,
}

impl Default for SecretString {
    fn default() -> Self {
        SecretString::new(String::new())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_token: Option<String>,
    pub token_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_in: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_token: Option<SecretString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_expires_in: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

/// OAuth2 JSON error shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OAuthErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_description: Option<String>,
}

impl OAuthErrorBody {
    pub fn new(error: impl Into<String>, description: impl Into<String>) -> Self {
        OAuthErrorBody {
            error: error.into(),
            error_description: Some(description.into()),
        }
    }
}

/// OAuth2 error codes used by the issuer.
pub mod error_code {
    pub const INVALID_REQUEST: &str = "invalid_request";
    pub const INVALID_CLIENT: &str = "invalid_client";
    pub const INVALID_GRANT: &str = "invalid_grant";
    pub const INVALID_SCOPE: &str = "invalid_scope";
    pub const UNSUPPORTED_GRANT_TYPE: &str = "unsupported_grant_type";
    pub const ACCESS_DENIED: &str = "access_denied";
    pub const NOT_FOUND: &str = "not_found";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpstreamError {
    #[error("issuer rejected request: {} ({})", .0.error, .0.error_description.as_deref().unwrap_or(""))]
    Rejected(OAuthErrorBody),
    #[error("issuer unreachable: {0}")]
    Unreachable(String),
}

/// How the broker talks to an issuer's token and key endpoints.
#[async_trait]
pub trait TokenEndpoint: Send + Sync {
    async fn token(
        &self,
        issuer_url: &str,
        request: TokenRequest,
    ) -> Result<TokenResponse, UpstreamError>;
    async fn jwks(&self, issuer_url: &str) -> Result<KeySet, UpstreamError>;
}

/// OIDC discovery document (the subset this stack uses).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryDocument {
    pub issuer: String,
    pub authorization_endpoint: String,
    pub token_endpoint: String,
    pub jwks_uri: String,
    #[serde(default)]
    pub grant_types_supported: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_request_debug_redacts() {
        let req = TokenRequest {
            grant_type: grant::REFRESH_TOKEN.into(),
            refresh_token: Some(SecretString::new("rt-secret-value")),
            client_id: "broker".into(),
            client_secret: SecretString::new("client-secret-value"),
            ..Default::default()
        };
        let dbg = format!("{req:?}");
        assert!(!dbg.contains("rt-secret-value"));
        assert!(!dbg.contains("client-secret-value"));
    }
}
