//! Unattended credentials for robot identities: onboard once with an
//! operator's browser consent, then renew the broker token with the robot's
//! enrolled key and deliver it to credential stores and nodes every cycle.

pub mod config;
pub mod journal;
pub mod manager;
pub mod report;
pub mod transport;

pub use config::{ConfigError, Destination, RobotConfig};
pub use journal::{Entry, Journal, JournalError};
pub use manager::{
    http_stores, ManagerSettings, RobotError, RobotManager, RobotRecord, StoreResolver,
};
pub use report::{CycleReport, DestinationKind, DestinationOutcome, Renewal, RobotReport};
pub use transport::{LocalDirTransport, PushError, PushTransport};
