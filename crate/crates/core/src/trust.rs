//! Relying-party authorization: accept bearer tokens from a configured set
//! of issuers, each with a key set fetched ahead of time.

use std::collections::BTreeMap;

use crate::claims::ClaimSet;
use crate::keys::KeySet;
use crate::scope::Scope;
use crate::token::{peek_issuer, verify, VerifyError, VerifyPolicy, DEFAULT_CLOCK_SKEW};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyReason {
    Malformed(String),
    UntrustedIssuer(String),
    Expired,
    InsufficientScope(Scope),
    Invalid(VerifyError),
}

impl DenyReason {
    pub fn code(&self) -> &'static str {
        match self {
            DenyReason::Malformed(_) => "malformed",
            DenyReason::UntrustedIssuer(_) => "untrusted_issuer",
            DenyReason::Expired => "expired",
            DenyReason::InsufficientScope(_) => "insufficient_scope",
            DenyReason::Invalid(e) => e.kind(),
        }
    }
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DenyReason::Malformed(m) => write!(f, "malformed token: {m}"),
            DenyReason::UntrustedIssuer(i) => write!(f, "issuer `{i}` is not trusted"),
            DenyReason::Expired => f.write_str("token expired"),
            DenyReason::InsufficientScope(s) => write!(f, "token lacks scope `{s}`"),
            DenyReason::Invalid(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow(ClaimSet),
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow(_))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrustedIssuers {
    issuers: BTreeMap<String, KeySet>,
    audiences: Option<Vec<String>>,
    skew: Option<u64>,
}

impl TrustedIssuers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trust(mut self, issuer: impl Into<String>, keys: KeySet) -> Self {
        self.issuers.insert(issuer.into(), keys);
        self
    }

    pub fn with_audiences(mut self, audiences: Vec<String>) -> Self {
        self.audiences = Some(audiences);
        self
    }

    pub fn issuers(&self) -> impl Iterator<Item = &str> {
        self.issuers.keys().map(String::as_str)
    }

    pub fn authorize(&self, token: &str, required: &Scope, now: i64) -> Decision {
        let iss = match peek_issuer(token) {
            Ok(iss) => iss,
            Err(e) => return Decision::Deny(DenyReason::Malformed(e.to_string())),
        };
        let Some(keys) = self.issuers.get(&iss) else {
            return Decision::Deny(DenyReason::UntrustedIssuer(iss));
        };
        let policy = VerifyPolicy {
            issuer: iss,
            audiences: self.audiences.clone(),
            required_scopes: vec![required.clone()],
            skew: self.skew.unwrap_or(DEFAULT_CLOCK_SKEW),
        };
        match verify(token, keys, &policy, now) {
            Ok(claims) => Decision::Allow(claims),
            Err(VerifyError::Expired { .. }) => Decision::Deny(DenyReason::Expired),
            Err(VerifyError::InsufficientScope(s)) => {
                Decision::Deny(DenyReason::InsufficientScope(s))
            }
            Err(VerifyError::Malformed(m)) => Decision::Deny(DenyReason::Malformed(m)),
            Err(e) => Decision::Deny(DenyReason::Invalid(e)),
        }
    }
}

/// Extract the token from an `Authorization: Bearer ...` header value.
pub fn bearer_from_header(value: &str) -> Option<&str> {
    let (scheme, token) = value.trim().split_once(' ')?;
    if scheme.eq_ignore_ascii_case("bearer") {
        let token = token.trim();
        (!token.is_empty()).then_some(token)
    } else {
        None
    }
}
