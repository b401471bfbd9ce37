//! Shared token model for the gridtoken services.
//!
//! - [`scope`]: WLCG scope vocabulary, path-prefix subsumption, downscoping.
//! - [`claims`] / [`token`]: access-token claims, minting, offline verification.
//! - [`keys`]: ES256 signing keys and JWKS publication.
//! - [`trust`]: relying-party authorization against trusted issuers.
//! - [`lifetimes`]: the single table of token lifetimes.

pub mod canonical;
pub mod claims;
pub mod clock;
pub mod fsutil;
pub mod keys;
pub mod lifetimes;
pub mod oauth;
pub mod scope;
pub mod secret;
pub mod token;
pub mod trust;

pub use claims::{ClaimSet, ANY_AUDIENCE, PROFILE_VERSION};
pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use keys::{Algorithm, Jwk, KeyError, KeyRing, KeySet, SigningKey};
pub use lifetimes::Lifetimes;
pub use scope::{downscope, parse_scope, Authz, DownscopeRefused, Scope, ScopeError, ScopePath};
pub use secret::SecretString;
pub use token::{mint, peek_claims, verify, MintError, VerifyError, VerifyPolicy};
pub use trust::{Decision, DenyReason, TrustedIssuers};
