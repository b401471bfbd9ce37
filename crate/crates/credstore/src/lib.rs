//! Holds broker tokens for job owners and keeps a fresh access token in
//! every registered job's sandbox.

pub mod client;
pub mod error;
pub mod http;
pub mod service;

pub use client::{CredStoreApi, HttpCredStore};
pub use error::{CredStoreError, ErrorBody};
pub use service::{
    Attached, CredStore, CredStoreSettings, CycleReport, JobAction, JobRegistration, JobReport,
    SettingsError, StoreAck, StoreRequest, StoredCredential, SANDBOX_TOKEN,
};
