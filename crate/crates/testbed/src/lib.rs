//! Shared fixtures for cross-component tests, plus a mock code-publication
//! service that consumes access tokens.

pub mod rcds;
pub mod stack;

pub use rcds::Rcds;
pub use stack::{serve_stack, ServedStack, Stack, StackBuilder};
