use std::path::PathBuf;

use gridtoken_broker::BrokerError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CredStoreError {
    #[error("invalid broker token: {0}")]
    InvalidBrokerToken(String),
    #[error("credential store unavailable: {0}")]
    Unavailable(String),
    #[error("no stored credential for {owner} in {experiment}/{role}")]
    NoCredential {
        owner: String,
        experiment: String,
        role: String,
    },
    #[error("job {0} is already registered")]
    DuplicateJob(String),
    #[error("invalid job registration: {0}")]
    InvalidRegistration(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("token exchange failed: {0}")]
    Exchange(BrokerError),
    #[error("cannot write {}: {source}", path.display())]
    Sandbox {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no cycle has run yet")]
    NoReport,
    #[error("credential store unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
}

/// Wire form of an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default)]
    pub retriable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broker: Option<BrokerError>,
}

impl CredStoreError {
    pub fn code(&self) -> &str {
        match self {
            CredStoreError::InvalidBrokerToken(_) => "invalid_broker_token",
            CredStoreError::Unavailable(_) => "store_unavailable",
            CredStoreError::NoCredential { .. } => "no_credential",
            CredStoreError::DuplicateJob(_) => "duplicate_job",
            CredStoreError::InvalidRegistration(_) => "invalid_registration",
            CredStoreError::InvalidRequest(_) => "invalid_request",
            CredStoreError::Exchange(_) => "exchange_failed",
            CredStoreError::Sandbox { .. } => "sandbox_write_failed",
            CredStoreError::NoReport => "no_report",
            CredStoreError::Unreachable(_) => "store_unreachable",
            CredStoreError::Remote { code, .. } => code,
        }
    }

    pub fn retriable(&self) -> bool {
        match self {
            CredStoreError::Unavailable(_)
            | CredStoreError::Unreachable(_)
            | CredStoreError::Sandbox { .. } => true,
            CredStoreError::Exchange(e) => e.retriable,
            _ => false,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            CredStoreError::InvalidBrokerToken(_)
            | CredStoreError::InvalidRegistration(_)
            | CredStoreError::InvalidRequest(_) => 400,
            CredStoreError::NoCredential { .. } | CredStoreError::NoReport => 404,
            CredStoreError::DuplicateJob(_) => 409,
            CredStoreError::Exchange(e) => e.code.http_status(),
            CredStoreError::Unavailable(_) | CredStoreError::Unreachable(_) => 503,
            CredStoreError::Sandbox { .. } | CredStoreError::Remote { .. } => 500,
        }
    }

    pub fn to_body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
            retriable: self.retriable(),
            broker: match self {
                CredStoreError::Exchange(e) => Some(e.clone()),
                _ => None,
            },
        }
    }

    pub fn from_body(body: ErrorBody) -> Self {
        if let Some(e) = body.broker {
            return CredStoreError::Exchange(e);
        }
        match body.error.as_str() {
            "invalid_broker_token" => CredStoreError::InvalidBrokerToken(body.message),
            "store_unavailable" => CredStoreError::Unavailable(body.message),
            "duplicate_job" => CredStoreError::DuplicateJob(body.message),
            "invalid_registration" => CredStoreError::InvalidRegistration(body.message),
            "invalid_request" => CredStoreError::InvalidRequest(body.message),
            "no_report" => CredStoreError::NoReport,
            _ => CredStoreError::Remote {
                code: body.error,
                message: body.message,
            },
        }
    }
}
