//! In-process [`TokenEndpoint`] that calls the issuer service directly.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use gridtoken_core::oauth::{
    error_code, OAuthErrorBody, TokenEndpoint, TokenRequest, TokenResponse, UpstreamError,
};
use gridtoken_core::KeySet;

use crate::service::IssuerService;

pub struct LocalTokenEndpoint {
    svc: Arc<IssuerService>,
    online: AtomicBool,
}

impl LocalTokenEndpoint {
    pub fn new(svc: Arc<IssuerService>) -> Self {
        LocalTokenEndpoint {
            svc,
            online: AtomicBool::new(true),
        }
    }

    /// While offline every call fails as unreachable.
    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    fn resolve(&self, issuer_url: &str) -> Result<String, UpstreamError> {
        if !self.online.load(Ordering::SeqCst) {
            return Err(UpstreamError::Unreachable(format!(
                "{issuer_url} is offline"
            )));
        }
        self.svc.issuer_name(issuer_url).ok_or_else(|| {
            UpstreamError::Rejected(OAuthErrorBody::new(
                error_code::NOT_FOUND,
                format!("no issuer at {issuer_url}"),
            ))
        })
    }
}

#[async_trait]
impl TokenEndpoint for LocalTokenEndpoint {
    async fn token(
        &self,
        issuer_url: &str,
        request: TokenRequest,
    ) -> Result<TokenResponse, UpstreamError> {
        let name = self.resolve(issuer_url)?;
        self.svc
            .token(&name, &request)
            .map_err(UpstreamError::Rejected)
    }

    async fn jwks(&self, issuer_url: &str) -> Result<KeySet, UpstreamError> {
        let name = self.resolve(issuer_url)?;
        self.svc.jwks(&name).map_err(|e| {
            UpstreamError::Rejected(OAuthErrorBody::new(e.oauth_code(), e.to_string()))
        })
    }
}
