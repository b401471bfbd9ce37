//! The lifetime table every service reads its token durations from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOUR: i64 = 3600;
pub const DAY: i64 = 24 * HOUR;
pub const WEEK: i64 = 7 * DAY;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifetimeError {
    #[error("lifetime `{0}` must be positive")]
    NonPositive(&'static str),
    #[error(
        "lifetimes must satisfy refresh > broker > access (got {refresh} / {broker} / {access})"
    )]
    Ladder {
        refresh: i64,
        broker: i64,
        access: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lifetimes {
    pub refresh_token: i64,
    pub broker_token: i64,
    pub access_token: i64,
    pub auth_code: i64,
    pub bootstrap_session: i64,
}

impl Default for Lifetimes {
    fn default() -> Self {
        Lifetimes {
            refresh_token: 4 * WEEK,
            broker_token: WEEK,
            access_token: 3 * HOUR,
            auth_code: 600,
            bootstrap_session: 900,
        }
    }
}

impl Lifetimes {
    pub fn validate(&self) -> Result<(), LifetimeError> {
        for (name, v) in [
            ("refresh_token", self.refresh_token),
            ("broker_token", self.broker_token),
            ("access_token", self.access_token),
            ("auth_code", self.auth_code),
            ("bootstrap_session", self.bootstrap_session),
        ] {
            if v <= 0 {
                return Err(LifetimeError::NonPositive(name));
            }
        }
        if !(self.refresh_token > self.broker_token && self.broker_token > self.access_token) {
            return Err(LifetimeError::Ladder {
                refresh: self.refresh_token,
                broker: self.broker_token,
                access: self.access_token,
            });
        }
        Ok(())
    }
}
