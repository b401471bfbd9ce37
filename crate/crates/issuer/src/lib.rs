//! Mock OIDC/OAuth2 token issuer hosting any number of issuer names under
//! one base URL.
//!
//! Supports the authorization-code grant (with a static consent page or an
//! auto-approve switch), refresh-token exchange with scope and audience
//! reduction, refresh-token rotation, and JWKS publication with key
//! rotation.

mod consent;
pub mod http;
pub mod local;
pub mod service;

pub use local::LocalTokenEndpoint;
pub use service::{
    AuthCodeRecord, AuthorizeRequest, ClientRegistration, IssuerError, IssuerService,
    RefreshTokenRecord,
};
