//! What one cycle did, per robot and per destination.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Renewal {
    NotDue,
    Renewed { expires_at: i64 },
    Failed { error: String, retriable: bool },
    OperatorActionRequired { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DestinationKind {
    Credstore,
    Node,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestinationOutcome {
    pub destination: String,
    pub kind: DestinationKind,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retriable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotReport {
    pub robot: String,
    pub at: i64,
    pub renewal: Renewal,
    pub token_expires_at: i64,
    pub destinations: Vec<DestinationOutcome>,
}

impl RobotReport {
    pub fn destination(&self, label: &str) -> Option<&DestinationOutcome> {
        self.destinations.iter().find(|d| d.destination == label)
    }

    pub fn successes(&self) -> usize {
        self.destinations.iter().filter(|d| d.ok).count()
    }

    pub fn all_ok(&self) -> bool {
        self.destinations.iter().all(|d| d.ok)
            && matches!(self.renewal, Renewal::NotDue | Renewal::Renewed { .. })
    }

    /// One JSON object per destination outcome.
    pub fn log_lines(&self) -> Vec<String> {
        self.destinations
            .iter()
            .map(|d| {
                serde_json::json!({
                    "at": self.at,
                    "robot": self.robot,
                    "renewal": self.renewal,
                    "token_expires_at": self.token_expires_at,
                    "destination": d.destination,
                    "kind": d.kind,
                    "outcome": if d.ok { "succeeded" } else { "failed" },
                    "error": d.error,
                    "retriable": d.retriable,
                })
                .to_string()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub at: i64,
    pub robots: Vec<RobotReport>,
}

impl CycleReport {
    pub fn robot(&self, id: &str) -> Option<&RobotReport> {
        self.robots.iter().find(|r| r.robot == id)
    }

    pub fn all_ok(&self) -> bool {
        self.robots.iter().all(RobotReport::all_ok)
    }

    pub fn log_lines(&self) -> Vec<String> {
        self.robots
            .iter()
            .flat_map(RobotReport::log_lines)
            .collect()
    }
}
