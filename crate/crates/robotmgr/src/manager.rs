//! Onboarding and the renew/store/push cycle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gridtoken_broker::{
    BeginRequest, BrokerApi, BrokerError, ErrorCode, PollResponse, RenewRequest, RobotRequest,
    SecondaryKey,
};
use gridtoken_client::Interaction;
use gridtoken_core::fsutil::write_private_atomic;
use gridtoken_core::lifetimes::DAY;
use gridtoken_core::secret::SecretString;
use gridtoken_core::SharedClock;
use gridtoken_credstore::{CredStoreApi, HttpCredStore, StoreRequest};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{credstore_label, ConfigError, RobotConfig};
use crate::journal::{Entry, Journal, JournalError};
use crate::report::{CycleReport, DestinationKind, DestinationOutcome, Renewal, RobotReport};
use crate::transport::PushTransport;

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Error)]
pub enum RobotError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("robot {0} is already onboarded")]
    Duplicate(String),
    #[error("operator did not complete authentication within {0}s")]
    BootstrapTimeout(i64),
    #[error("authentication failed: {0}")]
    Bootstrap(BrokerError),
    #[error("enrollment at the broker failed: {0}")]
    Enrollment(BrokerError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("robot state {}: {source}", path.display())]
    State {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("robot state {}: {reason}", path.display())]
    BadState { path: PathBuf, reason: String },
}

impl RobotError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RobotError::BootstrapTimeout(_) | RobotError::Bootstrap(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManagerSettings {
    /// Delivered broker tokens are never older than this.
    pub renew_after: i64,
    /// Expected time until the next cycle.
    pub cycle_period: i64,
    pub poll_interval: u64,
    pub consent_timeout: i64,
}

impl Default for ManagerSettings {
    fn default() -> Self {
        ManagerSettings {
            renew_after: DAY,
            cycle_period: 6 * 3600,
            poll_interval: 5,
            consent_timeout: 900,
        }
    }
}

/// Maps a credstore URL to a client for it.
pub type StoreResolver = Arc<dyn Fn(&str) -> Arc<dyn CredStoreApi> + Send + Sync>;

pub fn http_stores() -> StoreResolver {
    Arc::new(|url: &str| Arc::new(HttpCredStore::new(url)) as Arc<dyn CredStoreApi>)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub id: String,
    pub config: RobotConfig,
    pub key_file: PathBuf,
    pub onboarded_at: i64,
    pub token_issued_at: i64,
    pub token_expires_at: i64,
    pub last_success: BTreeMap<String, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_action_required: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TokenState {
    token: SecretString,
    issued_at: i64,
    expires_at: i64,
}

struct Robot {
    record: RobotRecord,
    key: SecondaryKey,
    token: SecretString,
}

pub struct RobotManager {
    state_dir: PathBuf,
    api: Arc<dyn BrokerApi>,
    clock: SharedClock,
    transport: Arc<dyn PushTransport>,
    stores: StoreResolver,
    settings: ManagerSettings,
    journal: Journal,
    robots: tokio::sync::Mutex<BTreeMap<String, Robot>>,
}

fn escalates(e: &BrokerError) -> bool {
    matches!(
        e.code,
        ErrorCode::BootstrapRequired | ErrorCode::NotEnrolled | ErrorCode::BadSignature
    )
}

impl RobotManager {
    pub fn open(
        state_dir: impl Into<PathBuf>,
        api: Arc<dyn BrokerApi>,
        clock: SharedClock,
        transport: Arc<dyn PushTransport>,
        stores: StoreResolver,
        settings: ManagerSettings,
    ) -> Result<Self, RobotError> {
        let state_dir = state_dir.into();
        let robots_dir = state_dir.join("robots");
        std::fs::create_dir_all(&robots_dir).map_err(|source| RobotError::State {
            path: robots_dir.clone(),
            source,
        })?;
        let mgr = RobotManager {
            journal: Journal::new(state_dir.join(JOURNAL_FILE)),
            state_dir,
            api,
            clock,
            transport,
            stores,
            settings,
            robots: tokio::sync::Mutex::new(BTreeMap::new()),
        };
        {
            let mut robots = mgr.robots.try_lock().expect("fresh manager");
            mgr.load(&mut robots)?;
        }
        Ok(mgr)
    }

    pub fn state_dir(&self) -> &Path {
        &self.state_dir
    }

    fn key_path(&self, id: &str) -> PathBuf {
        self.state_dir.join("robots").join(format!("{id}.key"))
    }

    fn token_path(&self, id: &str) -> PathBuf {
        self.state_dir.join("robots").join(format!("{id}.token"))
    }

    fn read_state(path: &Path) -> Result<String, RobotError> {
        std::fs::read_to_string(path).map_err(|source| RobotError::State {
            path: path.to_path_buf(),
            source,
        })
    }

    fn write_state(path: &Path, bytes: &[u8]) -> Result<(), RobotError> {
        write_private_atomic(path, bytes).map_err(|source| RobotError::State {
            path: path.to_path_buf(),
            source,
        })
    }

    fn load_token(&self, id: &str) -> Result<TokenState, RobotError> {
        let path = self.token_path(id);
        serde_json::from_str(&Self::read_state(&path)?).map_err(|e| RobotError::BadState {
            path,
            reason: e.to_string(),
        })
    }

    fn save_token(&self, id: &str, state: &TokenState) -> Result<(), RobotError> {
        let text = serde_json::to_string(state).expect("token state serializes");
        Self::write_state(&self.token_path(id), text.as_bytes())
    }

    /// Pick up robots from the journal that are not in memory yet, such as
    /// ones onboarded by another process.
    fn load(&self, robots: &mut BTreeMap<String, Robot>) -> Result<(), RobotError> {
        let entries = self.journal.replay()?;
        let known: Vec<String> = robots.keys().cloned().collect();
        for entry in entries {
            match entry {
                Entry::Onboarded { at, robot } => {
                    let id = robot.id();
                    if known.contains(&id) {
                        continue;
                    }
                    let key_file = self.key_path(&id);
                    let key = SecondaryKey::from_seed_hex(&Self::read_state(&key_file)?).map_err(
                        |e| RobotError::BadState {
                            path: key_file.clone(),
                            reason: e.to_string(),
                        },
                    )?;
                    let token = self.load_token(&id)?;
                    robots.insert(
                        id.clone(),
                        Robot {
                            record: RobotRecord {
                                id,
                                config: robot,
                                key_file,
                                onboarded_at: at,
                                token_issued_at: token.issued_at,
                                token_expires_at: token.expires_at,
                                last_success: BTreeMap::new(),
                                operator_action_required: None,
                            },
                            key,
                            token: token.token,
                        },
                    );
                }
                Entry::Delivered {
                    at,
                    robot,
                    destination,
                } if !known.contains(&robot) => {
                    if let Some(r) = robots.get_mut(&robot) {
                        r.record.last_success.insert(destination, at);
                    }
                }
                Entry::Escalated { robot, reason, .. } if !known.contains(&robot) => {
                    if let Some(r) = robots.get_mut(&robot) {
                        r.record.operator_action_required = Some(reason);
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub async fn status(&self) -> Result<Vec<RobotRecord>, RobotError> {
        let mut robots = self.robots.lock().await;
        self.load(&mut robots)?;
        Ok(robots.values().map(|r| r.record.clone()).collect())
    }

    /// Interactive bootstrap for a new robot, key enrollment, then its first
    /// cycle. Nothing is persisted unless enrollment succeeds.
    pub async fn onboard(
        &self,
        operator: &dyn Interaction,
        admin: &SecretString,
        config: RobotConfig,
    ) -> Result<(RobotRecord, RobotReport), RobotError> {
        config.validate()?;
        let id = config.id();
        {
            let mut robots = self.robots.lock().await;
            self.load(&mut robots)?;
            if robots.contains_key(&id) {
                return Err(RobotError::Duplicate(id));
            }
        }
        let session = self
            .api
            .begin(BeginRequest {
                principal: config.principal.clone(),
                experiment: config.experiment.clone(),
                role: config.role.clone(),
            })
            .await
            .map_err(RobotError::Bootstrap)?;
        operator.show_url(&session.url);
        let started = self.clock.now();
        let grant = loop {
            operator.pause(self.settings.poll_interval).await;
            match self.api.poll(&session.poll_handle).await {
                Ok(PollResponse::Complete { broker_token, .. }) => break broker_token,
                Ok(PollResponse::Pending) => {}
                Err(e) if e.code == ErrorCode::SessionExpired => {
                    return Err(RobotError::BootstrapTimeout(self.settings.consent_timeout))
                }
                Err(e) => return Err(RobotError::Bootstrap(e)),
            }
            if self.clock.now() - started >= self.settings.consent_timeout {
                return Err(RobotError::BootstrapTimeout(self.settings.consent_timeout));
            }
        };

        let key = SecondaryKey::generate();
        self.api
            .store_for_robot(
                admin,
                RobotRequest {
                    principal: config.principal.clone(),
                    experiment: config.experiment.clone(),
                    role: config.role.clone(),
                    grant: grant.token.clone(),
                    public_key: key.public_hex(),
                },
            )
            .await
            .map_err(RobotError::Enrollment)?;

        let mut robots = self.robots.lock().await;
        if robots.contains_key(&id) {
            return Err(RobotError::Duplicate(id));
        }
        let key_file = self.key_path(&id);
        Self::write_state(
            &key_file,
            format!("{}\n", key.seed_hex().expose()).as_bytes(),
        )?;
        self.save_token(
            &id,
            &TokenState {
                token: grant.token.clone(),
                issued_at: grant.issued_at,
                expires_at: grant.expires_at,
            },
        )?;
        let now = self.clock.now();
        self.journal.append(&Entry::Onboarded {
            at: now,
            robot: config.clone(),
        })?;
        tracing::info!(robot = %id, "robot onboarded");
        let robot = robots.entry(id.clone()).or_insert(Robot {
            record: RobotRecord {
                id,
                config,
                key_file,
                onboarded_at: now,
                token_issued_at: grant.issued_at,
                token_expires_at: grant.expires_at,
                last_success: BTreeMap::new(),
                operator_action_required: None,
            },
            key,
            token: grant.token,
        });
        let report = self.cycle_robot(robot, now).await;
        Ok((robot.record.clone(), report))
    }

    /// Renew where due, then deliver every robot's token everywhere.
    pub async fn run_cycle(&self) -> Result<CycleReport, RobotError> {
        let mut robots = self.robots.lock().await;
        self.load(&mut robots)?;
        let now = self.clock.now();
        let mut report = CycleReport {
            at: now,
            robots: Vec::with_capacity(robots.len()),
        };
        for robot in robots.values_mut() {
            report.robots.push(self.cycle_robot(robot, now).await);
        }
        Ok(report)
    }

    async fn renew(&self, robot: &mut Robot, now: i64) -> Renewal {
        let cfg = &robot.record.config;
        let req = RenewRequest {
            assertion: robot.key.assert(&cfg.principal, &cfg.experiment, now),
            experiment: cfg.experiment.clone(),
            role: cfg.role.clone(),
        };
        let id = robot.record.id.clone();
        match self.api.renew(req).await {
            Ok(grant) => {
                robot.token = grant.token.clone();
                robot.record.token_issued_at = grant.issued_at;
                robot.record.token_expires_at = grant.expires_at;
                let saved = self.save_token(
                    &id,
                    &TokenState {
                        token: grant.token,
                        issued_at: grant.issued_at,
                        expires_at: grant.expires_at,
                    },
                );
                if let Err(e) = saved {
                    return Renewal::Failed {
                        error: e.to_string(),
                        retriable: true,
                    };
                }
                self.note(Entry::Renewed {
                    at: now,
                    robot: id,
                    expires_at: grant.expires_at,
                });
                Renewal::Renewed {
                    expires_at: grant.expires_at,
                }
            }
            Err(e) if escalates(&e) => {
                let reason = format!("operator action required: {e}");
                tracing::error!(robot = %id, code = e.code.as_str(), "robot needs a new bootstrap");
                robot.record.operator_action_required = Some(reason.clone());
                self.note(Entry::Escalated {
                    at: now,
                    robot: id,
                    reason: reason.clone(),
                });
                Renewal::OperatorActionRequired { reason }
            }
            Err(e) => Renewal::Failed {
                retriable: e.retriable || e.code == ErrorCode::BrokerUnreachable,
                error: e.to_string(),
            },
        }
    }

    fn note(&self, entry: Entry) {
        if let Err(e) = self.journal.append(&entry) {
            tracing::warn!(error = %e, "journal append failed");
        }
    }

    async fn cycle_robot(&self, robot: &mut Robot, now: i64) -> RobotReport {
        let renewal = match &robot.record.operator_action_required {
            Some(reason) => Renewal::OperatorActionRequired {
                reason: reason.clone(),
            },
            // renew if waiting for the next cycle would let the token age past renew_after
            None if now - robot.record.token_issued_at + self.settings.cycle_period
                > self.settings.renew_after
                || now >= robot.record.token_expires_at =>
            {
                self.renew(robot, now).await
            }
            None => Renewal::NotDue,
        };
        let live = now < robot.record.token_expires_at;
        let cfg = robot.record.config.clone();
        let mut destinations = Vec::with_capacity(cfg.credstores.len() + cfg.destinations.len());

        for url in &cfg.credstores {
            let label = credstore_label(url);
            let result = if live {
                (self.stores)(url)
                    .store(StoreRequest {
                        owner: cfg.principal.clone(),
                        experiment: cfg.experiment.clone(),
                        role: cfg.role.clone(),
                        broker_token: robot.token.clone(),
                    })
                    .await
                    .map(|_| ())
                    .map_err(|e| (e.to_string(), e.retriable()))
            } else {
                Err(("broker token expired".to_string(), false))
            };
            destinations.push(self.outcome(robot, label, DestinationKind::Credstore, result, now));
        }
        let bytes = format!("{}\n", robot.token.expose());
        for d in &cfg.destinations {
            let result = if live {
                self.transport
                    .push(&d.node, &d.path, bytes.as_bytes())
                    .await
                    .map_err(|e| (e.to_string(), e.retriable()))
            } else {
                Err(("broker token expired".to_string(), false))
            };
            destinations.push(self.outcome(robot, d.label(), DestinationKind::Node, result, now));
        }
        let report = RobotReport {
            robot: robot.record.id.clone(),
            at: now,
            renewal,
            token_expires_at: robot.record.token_expires_at,
            destinations,
        };
        for line in report.log_lines() {
            tracing::info!(target: "robotmgr::cycle", "{line}");
        }
        report
    }

    fn outcome(
        &self,
        robot: &mut Robot,
        label: String,
        kind: DestinationKind,
        result: Result<(), (String, bool)>,
        now: i64,
    ) -> DestinationOutcome {
        match result {
            Ok(()) => {
                robot.record.last_success.insert(label.clone(), now);
                self.note(Entry::Delivered {
                    at: now,
                    robot: robot.record.id.clone(),
                    destination: label.clone(),
                });
                DestinationOutcome {
                    destination: label,
                    kind,
                    ok: true,
                    error: None,
                    retriable: None,
                }
            }
            Err((error, retriable)) => DestinationOutcome {
                destination: label,
                kind,
                ok: false,
                error: Some(error),
                retriable: Some(retriable),
            },
        }
    }
}
