//! Stored broker tokens and the jobs whose sandboxes they keep fresh.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use gridtoken_broker::{BrokerApi, BrokerError, ErrorCode, ExchangeOptions};
use gridtoken_core::claims::{experiment_group, role_group};
use gridtoken_core::fsutil::write_private_atomic;
use gridtoken_core::secret::SecretString;
use gridtoken_core::{peek_claims, Lifetimes, SharedClock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::CredStoreError;

/// File name of the access token inside a job sandbox.
pub const SANDBOX_TOKEN: &str = "bt_token";
pub const DEFAULT_LEAD_TIME: i64 = 600;
pub const DEFAULT_CYCLE_PERIOD: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredStoreSettings {
    pub lead_time: i64,
    pub cycle_period: i64,
    pub access_lifetime: i64,
}

impl Default for CredStoreSettings {
    fn default() -> Self {
        CredStoreSettings {
            lead_time: DEFAULT_LEAD_TIME,
            cycle_period: DEFAULT_CYCLE_PERIOD,
            access_lifetime: Lifetimes::default().access_token,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("need 0 < cycle period ({cycle_period}) < lead time ({lead_time}) < access lifetime ({access_lifetime})")]
pub struct SettingsError {
    pub cycle_period: i64,
    pub lead_time: i64,
    pub access_lifetime: i64,
}

impl CredStoreSettings {
    pub fn validate(&self) -> Result<(), SettingsError> {
        if 0 < self.cycle_period
            && self.cycle_period < self.lead_time
            && self.lead_time < self.access_lifetime
        {
            return Ok(());
        }
        Err(SettingsError {
            cycle_period: self.cycle_period,
            lead_time: self.lead_time,
            access_lifetime: self.access_lifetime,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRequest {
    pub owner: String,
    pub experiment: String,
    pub role: String,
    pub broker_token: SecretString,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreAck {
    pub replaced: bool,
}

#[derive(Debug, Clone)]
pub struct StoredCredential {
    pub owner: String,
    pub experiment: String,
    pub role: String,
    pub broker_token: SecretString,
    pub stored_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRegistration {
    pub job_id: String,
    pub owner: String,
    pub experiment: String,
    pub role: String,
    pub sandbox: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scopes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_time: Option<i64>,
}

impl JobRegistration {
    pub fn new(
        job_id: impl Into<String>,
        owner: impl Into<String>,
        experiment: impl Into<String>,
        role: impl Into<String>,
        sandbox: impl Into<PathBuf>,
    ) -> Self {
        JobRegistration {
            job_id: job_id.into(),
            owner: owner.into(),
            experiment: experiment.into(),
            role: role.into(),
            sandbox: sandbox.into(),
            scopes: None,
            lead_time: None,
        }
    }

    pub fn token_path(&self) -> PathBuf {
        self.sandbox.join(SANDBOX_TOKEN)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attached {
    pub job_id: String,
    pub path: PathBuf,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobAction {
    Refreshed,
    Unchanged,
    NeedsRenewal,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobReport {
    pub job_id: String,
    pub action: JobAction,
    /// Expiry of the token now in the sandbox.
    pub expires_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub at: i64,
    pub jobs: Vec<JobReport>,
}

impl CycleReport {
    pub fn job(&self, id: &str) -> Option<&JobReport> {
        self.jobs.iter().find(|j| j.job_id == id)
    }

    pub fn with_action(&self, action: JobAction) -> Vec<&str> {
        self.jobs
            .iter()
            .filter(|j| j.action == action)
            .map(|j| j.job_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CredKey {
    owner: String,
    experiment: String,
    role: String,
}

impl CredKey {
    fn new(owner: &str, experiment: &str, role: &str) -> Self {
        CredKey {
            owner: owner.into(),
            experiment: experiment.into(),
            role: role.into(),
        }
    }
}

struct Job {
    reg: JobRegistration,
    lead_time: i64,
    /// Held for the duration of any sandbox write; the value is the expiry
    /// of the token currently in the sandbox.
    expires_at: tokio::sync::Mutex<i64>,
}

pub struct CredStore {
    api: Arc<dyn BrokerApi>,
    clock: SharedClock,
    settings: CredStoreSettings,
    creds: Mutex<HashMap<CredKey, StoredCredential>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    last_report: Mutex<Option<CycleReport>>,
}

/// Broker errors after which only a fresh broker token helps, plus outages,
/// which the owner should also hear about.
fn needs_renewal(e: &BrokerError) -> bool {
    matches!(
        e.code,
        ErrorCode::BrokerTokenExpired
            | ErrorCode::BrokerTokenUnknown
            | ErrorCode::BootstrapRequired
            | ErrorCode::BrokerUnreachable
            | ErrorCode::IssuerUnreachable
    )
}

impl CredStore {
    pub fn new(
        api: Arc<dyn BrokerApi>,
        clock: SharedClock,
        settings: CredStoreSettings,
    ) -> Result<Self, SettingsError> {
        settings.validate()?;
        Ok(CredStore {
            api,
            clock,
            settings,
            creds: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            last_report: Mutex::new(None),
        })
    }

    pub fn settings(&self) -> CredStoreSettings {
        self.settings
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    /// Validate `broker_token` with one exchange, then store it.
    pub async fn store_credential(&self, req: &StoreRequest) -> Result<StoreAck, CredStoreError> {
        let probe = self
            .api
            .exchange(&req.broker_token, ExchangeOptions::default())
            .await
            .map_err(|e| match e.code {
                ErrorCode::BrokerUnreachable
                | ErrorCode::IssuerUnreachable
                | ErrorCode::RateLimited => CredStoreError::Unavailable(e.to_string()),
                _ => CredStoreError::InvalidBrokerToken(e.to_string()),
            })?;
        let claims = peek_claims(&probe.access_token).map_err(|e| {
            CredStoreError::InvalidBrokerToken(format!("probe token unreadable: {e}"))
        })?;
        if claims.sub != req.owner
            || !claims.has_group(&experiment_group(&req.experiment))
            || !claims.has_group(&role_group(&req.experiment, &req.role))
        {
            return Err(CredStoreError::InvalidBrokerToken(format!(
                "token is not for {} in {}/{}",
                req.owner, req.experiment, req.role
            )));
        }
        let key = CredKey::new(&req.owner, &req.experiment, &req.role);
        let cred = StoredCredential {
            owner: req.owner.clone(),
            experiment: req.experiment.clone(),
            role: req.role.clone(),
            broker_token: req.broker_token.clone(),
            stored_at: self.clock.now(),
        };
        let replaced = self
            .creds
            .lock()
            .expect("creds lock")
            .insert(key, cred)
            .is_some();
        tracing::info!(owner = %req.owner, experiment = %req.experiment, role = %req.role, replaced, "credential stored");
        Ok(StoreAck { replaced })
    }

    pub fn credential(
        &self,
        owner: &str,
        experiment: &str,
        role: &str,
    ) -> Option<StoredCredential> {
        self.creds
            .lock()
            .expect("creds lock")
            .get(&CredKey::new(owner, experiment, role))
            .cloned()
    }

    fn credential_for(&self, reg: &JobRegistration) -> Result<SecretString, CredStoreError> {
        self.credential(&reg.owner, &reg.experiment, &reg.role)
            .map(|c| c.broker_token)
            .ok_or_else(|| CredStoreError::NoCredential {
                owner: reg.owner.clone(),
                experiment: reg.experiment.clone(),
                role: reg.role.clone(),
            })
    }

    fn check_registration(&self, reg: &JobRegistration) -> Result<i64, CredStoreError> {
        if reg.job_id.is_empty() {
            return Err(CredStoreError::InvalidRegistration(
                "job id is empty".into(),
            ));
        }
        let lead = reg.lead_time.unwrap_or(self.settings.lead_time);
        if lead <= 0 || lead >= self.settings.access_lifetime {
            return Err(CredStoreError::InvalidRegistration(format!(
                "lead time {lead} must be positive and below the access-token lifetime {}",
                self.settings.access_lifetime
            )));
        }
        let meta = std::fs::metadata(&reg.sandbox).map_err(|e| {
            CredStoreError::InvalidRegistration(format!("sandbox {}: {e}", reg.sandbox.display()))
        })?;
        if !meta.is_dir() || meta.permissions().readonly() {
            return Err(CredStoreError::InvalidRegistration(format!(
                "sandbox {} is not a writable directory",
                reg.sandbox.display()
            )));
        }
        Ok(lead)
    }

    async fn mint_into(
        &self,
        reg: &JobRegistration,
        token: &SecretString,
    ) -> Result<i64, CredStoreError> {
        let opts = ExchangeOptions {
            scopes: reg.scopes.clone(),
            audience: None,
        };
        let at = self
            .api
            .exchange(token, opts)
            .await
            .map_err(CredStoreError::Exchange)?;
        write_sandbox(&reg.token_path(), &at.access_token)?;
        Ok(at.expires_at)
    }

    /// Register a job and put its first access token in the sandbox.
    pub async fn attach_job(&self, reg: JobRegistration) -> Result<Attached, CredStoreError> {
        let lead_time = self.check_registration(&reg)?;
        if self
            .jobs
            .lock()
            .expect("jobs lock")
            .contains_key(&reg.job_id)
        {
            return Err(CredStoreError::DuplicateJob(reg.job_id));
        }
        let token = self.credential_for(&reg)?;
        let job = Arc::new(Job {
            lead_time,
            expires_at: tokio::sync::Mutex::new(0),
            reg,
        });
        let mut guard = job.expires_at.lock().await;
        {
            let mut jobs = self.jobs.lock().expect("jobs lock");
            if jobs.contains_key(&job.reg.job_id) {
                return Err(CredStoreError::DuplicateJob(job.reg.job_id.clone()));
            }
            jobs.insert(job.reg.job_id.clone(), job.clone());
        }
        match self.mint_into(&job.reg, &token).await {
            Ok(exp) => {
                *guard = exp;
                Ok(Attached {
                    job_id: job.reg.job_id.clone(),
                    path: job.reg.token_path(),
                    expires_at: exp,
                })
            }
            Err(e) => {
                self.jobs.lock().expect("jobs lock").remove(&job.reg.job_id);
                Err(e)
            }
        }
    }

    pub fn job_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .jobs
            .lock()
            .expect("jobs lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub fn detach_job(&self, job_id: &str) -> bool {
        self.jobs
            .lock()
            .expect("jobs lock")
            .remove(job_id)
            .is_some()
    }

    async fn refresh_job(&self, job: &Job, now: i64) -> JobReport {
        let mut exp = job.expires_at.lock().await;
        let report = |action, expires_at, reason: Option<String>| JobReport {
            job_id: job.reg.job_id.clone(),
            action,
            expires_at,
            reason,
        };
        if *exp - now > job.lead_time {
            return report(JobAction::Unchanged, *exp, None);
        }
        let token = match self.credential_for(&job.reg) {
            Ok(t) => t,
            Err(e) => return report(JobAction::NeedsRenewal, *exp, Some(e.to_string())),
        };
        match self.mint_into(&job.reg, &token).await {
            Ok(new) => {
                *exp = new;
                report(JobAction::Refreshed, new, None)
            }
            Err(CredStoreError::Exchange(e)) if needs_renewal(&e) => {
                tracing::warn!(job = %job.reg.job_id, code = e.code.as_str(), "job needs a renewed broker token");
                report(JobAction::NeedsRenewal, *exp, Some(e.to_string()))
            }
            Err(e) => report(JobAction::Failed, *exp, Some(e.to_string())),
        }
    }

    /// Refresh every sandbox token that expires within its job's lead time.
    pub async fn refresh_cycle(&self) -> CycleReport {
        let now = self.clock.now();
        let mut jobs: Vec<Arc<Job>> = self
            .jobs
            .lock()
            .expect("jobs lock")
            .values()
            .cloned()
            .collect();
        jobs.sort_by(|a, b| a.reg.job_id.cmp(&b.reg.job_id));
        let mut report = CycleReport {
            at: now,
            jobs: Vec::with_capacity(jobs.len()),
        };
        for job in jobs {
            report.jobs.push(self.refresh_job(&job, now).await);
        }
        *self.last_report.lock().expect("report lock") = Some(report.clone());
        report
    }

    pub fn last_report(&self) -> Option<CycleReport> {
        self.last_report.lock().expect("report lock").clone()
    }
}

fn write_sandbox(path: &Path, token: &str) -> Result<(), CredStoreError> {
    write_private_atomic(path, format!("{token}\n").as_bytes()).map_err(|source| {
        CredStoreError::Sandbox {
            path: path.to_path_buf(),
            source,
        }
    })
}
