//! Credential broker.
//!
//! Holds one refresh token per (experiment, role, principal), hands out
//! short-lived broker tokens, and exchanges those for access tokens minted
//! by the upstream issuer. Refresh tokens never leave this process except
//! sealed on disk.

pub mod api;
pub mod client;
pub mod config;
pub mod http;
pub mod ratelimit;
pub mod secondary;
pub mod service;
pub mod store;
pub mod upstream;

pub use api::{
    AccessToken, AuthSession, BeginRequest, BrokerApi, BrokerError, BrokerTokenGrant, ErrorCode,
    ExchangeOptions, Health, PollResponse, RenewRequest, RobotRequest, RobotResponse,
};
pub use client::{HttpBroker, LocalBroker};
pub use config::{BrokerConfig, ChangeReport, ConfigError, ExperimentConfig, IssuerClient};
pub use secondary::{SecondaryAssertion, SecondaryKey};
pub use service::{Broker, BrokerSettings};
pub use store::{MasterKey, RecordKey};
pub use upstream::HttpTokenEndpoint;
