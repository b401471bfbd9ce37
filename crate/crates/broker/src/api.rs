//! Wire types, the error shape, and the [`BrokerApi`] trait clients use.

use async_trait::async_trait;
use gridtoken_core::secret::SecretString;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ChangeReport;
use crate::secondary::SecondaryAssertion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownExperiment,
    UnknownRole,
    TooManySessions,
    UnknownSession,
    SessionExpired,
    ConsentDenied,
    StaleTimestamp,
    BadSignature,
    NotEnrolled,
    BootstrapRequired,
    BrokerTokenExpired,
    BrokerTokenUnknown,
    RateLimited,
    DownscopeRefused,
    IssuerUnreachable,
    Unauthenticated,
    Duplicate,
    InvalidGrant,
    InvalidRequest,
    InvalidConfig,
    StoreFailure,
    UpstreamError,
    /// Client side only: the broker could not be reached.
    BrokerUnreachable,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownExperiment => "unknown_experiment",
            ErrorCode::UnknownRole => "unknown_role",
            ErrorCode::TooManySessions => "too_many_sessions",
            ErrorCode::UnknownSession => "unknown_session",
            ErrorCode::SessionExpired => "session_expired",
            ErrorCode::ConsentDenied => "consent_denied",
            ErrorCode::StaleTimestamp => "stale_timestamp",
            ErrorCode::BadSignature => "bad_signature",
            ErrorCode::NotEnrolled => "not_enrolled",
            ErrorCode::BootstrapRequired => "bootstrap_required",
            ErrorCode::BrokerTokenExpired => "broker_token_expired",
            ErrorCode::BrokerTokenUnknown => "broker_token_unknown",
            ErrorCode::RateLimited => "rate_limited",
            ErrorCode::DownscopeRefused => "downscope_refused",
            ErrorCode::IssuerUnreachable => "issuer_unreachable",
            ErrorCode::Unauthenticated => "unauthenticated",
            ErrorCode::Duplicate => "duplicate",
            ErrorCode::InvalidGrant => "invalid_grant",
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::InvalidConfig => "invalid_config",
            ErrorCode::StoreFailure => "store_failure",
            ErrorCode::UpstreamError => "upstream_error",
            ErrorCode::BrokerUnreachable => "broker_unreachable",
        }
    }

    pub fn retriable(self) -> bool {
        matches!(
            self,
            ErrorCode::RateLimited
                | ErrorCode::IssuerUnreachable
                | ErrorCode::BrokerUnreachable
                | ErrorCode::StoreFailure
        )
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::UnknownExperiment | ErrorCode::UnknownRole | ErrorCode::UnknownSession => {
                404
            }
            ErrorCode::TooManySessions | ErrorCode::RateLimited => 429,
            ErrorCode::SessionExpired => 410,
            ErrorCode::ConsentDenied
            | ErrorCode::NotEnrolled
            | ErrorCode::BootstrapRequired
            | ErrorCode::DownscopeRefused
            | ErrorCode::InvalidGrant => 403,
            ErrorCode::StaleTimestamp
            | ErrorCode::BadSignature
            | ErrorCode::BrokerTokenExpired
            | ErrorCode::BrokerTokenUnknown
            | ErrorCode::Unauthenticated => 401,
            ErrorCode::Duplicate => 409,
            ErrorCode::InvalidRequest | ErrorCode::InvalidConfig => 400,
            ErrorCode::IssuerUnreachable
            | ErrorCode::UpstreamError
            | ErrorCode::BrokerUnreachable => 502,
            ErrorCode::StoreFailure => 500,
        }
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error body: machine-readable code, human message, optional retry-after.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct BrokerError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<u64>,
    #[serde(default)]
    pub retriable: bool,
}

impl BrokerError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        BrokerError {
            code,
            message: message.into(),
            retry_after: None,
            retriable: code.retriable(),
        }
    }

    pub fn rate_limited(retry_after: u64) -> Self {
        BrokerError {
            retry_after: Some(retry_after),
            ..BrokerError::new(
                ErrorCode::RateLimited,
                format!("rate limit exceeded; retry in {retry_after}s"),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeginRequest {
    pub principal: String,
    pub experiment: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthSession {
    /// Where the user completes consent in a browser.
    pub url: String,
    pub poll_handle: SecretString,
    pub expires_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerTokenGrant {
    pub token: SecretString,
    pub principal: String,
    pub experiment: String,
    pub role: String,
    pub issued_at: i64,
    pub expires_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub access_token: String,
    pub expires_at: i64,
    #[serde(default)]
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PollResponse {
    Pending,
    Complete {
        broker_token: BrokerTokenGrant,
        access_token: AccessToken,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewRequest {
    pub assertion: SecondaryAssertion,
    pub experiment: String,
    pub role: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scopes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotRequest {
    pub principal: String,
    pub experiment: String,
    pub role: String,
    /// Broker token from the operator-driven bootstrap for this robot.
    pub grant: SecretString,
    /// Hex Ed25519 public key the robot will renew with.
    pub public_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotResponse {
    pub experiment: String,
    pub role: String,
    pub principal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub experiments: usize,
}

/// Everything a client can ask of the broker.
#[async_trait]
pub trait BrokerApi: Send + Sync {
    async fn begin(&self, req: BeginRequest) -> Result<AuthSession, BrokerError>;
    async fn poll(&self, handle: &SecretString) -> Result<PollResponse, BrokerError>;
    async fn renew(&self, req: RenewRequest) -> Result<BrokerTokenGrant, BrokerError>;
    async fn exchange(
        &self,
        token: &SecretString,
        opts: ExchangeOptions,
    ) -> Result<AccessToken, BrokerError>;
    async fn store_for_robot(
        &self,
        admin: &SecretString,
        req: RobotRequest,
    ) -> Result<RobotResponse, BrokerError>;
    async fn apply_config(
        &self,
        admin: &SecretString,
        document: &str,
    ) -> Result<ChangeReport, BrokerError>;
    async fn health(&self) -> Result<Health, BrokerError>;
}
