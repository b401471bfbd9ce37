//! Authoritative registry of users, experiments, roles and role scopes.
//!
//! The registry exports a two-part directory document (members, then
//! capabilities) for the issuer and generates issuer and broker
//! configuration from the same state.

pub mod export;
pub mod http;
pub mod model;
pub mod service;

pub use export::{
    export_directory, generate_configs, BrokerEntry, CapabilityEntry, DirectoryDocument,
    ExperimentGrant, ExperimentRole, GeneratedConfig, IssuerEntry, MemberEntry,
};
pub use model::{
    apply_change, replay, Change, Experiment, RegistryError, RegistryState, User, SHARED_ISSUER,
};
pub use service::{Registry, ServiceError};

use gridtoken_core::scope::Scope;
use gridtoken_core::{Decision, TrustedIssuers};

/// Allow iff the token verifies against one of the trusted issuers and
/// carries a scope covering `required`.
pub fn authorize_api(
    token: &str,
    required: &Scope,
    trusted: &TrustedIssuers,
    now: i64,
) -> Decision {
    trusted.authorize(token, required, now)
}
