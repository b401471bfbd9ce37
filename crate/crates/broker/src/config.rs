//! Declarative broker configuration and its diff.

use std::collections::{BTreeMap, BTreeSet};

use gridtoken_core::canonical::canonical_json;
use gridtoken_core::secret::SecretString;
use gridtoken_core::Lifetimes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RATE_LIMIT: u32 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("experiment `{experiment}` references unknown issuer `{issuer}`")]
    UnresolvedIssuer { experiment: String, issuer: String },
    #[error("experiment `{0}` has no roles")]
    NoRoles(String),
    #[error("rate limit for `{0}` must be > 0")]
    ZeroRateLimit(String),
    #[error("secondary key for `{principal}` in `{experiment}` is not a 32-byte hex public key")]
    BadSecondaryKey {
        experiment: String,
        principal: String,
    },
    #[error("ha stanza must list exactly 3 distinct servers, got {0}")]
    BadHa(usize),
    #[error("admin credential hash must be 64 hex chars")]
    BadAdmin,
    #[error(transparent)]
    Lifetimes(#[from] gridtoken_core::lifetimes::LifetimeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuerClient {
    pub client_id: String,
    pub client_secret: SecretString,
}

/// One experiment as exposed by the broker. The first four fields have the
/// same shape as the registry's generated broker section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub issuer: String,
    pub issuer_url: String,
    pub roles: Vec<String>,
    pub realm: String,
    /// principal -> hex Ed25519 public key
    #[serde(default)]
    pub secondary_keys: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaConfig {
    pub servers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminConfig {
    /// sha256 of the admin credential, hex.
    pub credential_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    #[serde(default)]
    pub issuers: BTreeMap<String, IssuerClient>,
    #[serde(default)]
    pub experiments: BTreeMap<String, ExperimentConfig>,
    #[serde(default = "default_rate_limit")]
    pub rate_limit: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ha: Option<HaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admin: Option<AdminConfig>,
    #[serde(default)]
    pub lifetimes: Lifetimes,
}

fn default_rate_limit() -> u32 {
    DEFAULT_RATE_LIMIT
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            issuers: BTreeMap::new(),
            experiments: BTreeMap::new(),
            rate_limit: DEFAULT_RATE_LIMIT,
            ha: None,
            admin: None,
            lifetimes: Lifetimes::default(),
        }
    }
}

fn is_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.chars().all(|c| c.is_ascii_hexdigit())
}

impl BrokerConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: BrokerConfig =
            serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.lifetimes.validate()?;
        if self.rate_limit == 0 {
            return Err(ConfigError::ZeroRateLimit("default".into()));
        }
        for (name, exp) in &self.experiments {
            if !self.issuers.contains_key(&exp.issuer) {
                return Err(ConfigError::UnresolvedIssuer {
                    experiment: name.clone(),
                    issuer: exp.issuer.clone(),
                });
            }
            if exp.roles.is_empty() {
                return Err(ConfigError::NoRoles(name.clone()));
            }
            if exp.rate_limit == Some(0) {
                return Err(ConfigError::ZeroRateLimit(name.clone()));
            }
            for (principal, key) in &exp.secondary_keys {
                if !is_hex(key, 64) {
                    return Err(ConfigError::BadSecondaryKey {
                        experiment: name.clone(),
                        principal: principal.clone(),
                    });
                }
            }
        }
        if let Some(ha) = &self.ha {
            let distinct: BTreeSet<&String> = ha.servers.iter().filter(|s| !s.is_empty()).collect();
            if ha.servers.len() != 3 || distinct.len() != 3 {
                return Err(ConfigError::BadHa(ha.servers.len()));
            }
        }
        if let Some(admin) = &self.admin {
            if !is_hex(&admin.credential_sha256, 64) {
                return Err(ConfigError::BadAdmin);
            }
        }
        Ok(())
    }

    pub fn rate_limit_for(&self, experiment: &str) -> u32 {
        self.experiments
            .get(experiment)
            .and_then(|e| e.rate_limit)
            .unwrap_or(self.rate_limit)
    }

    /// The effective config with all defaults filled in, as canonical JSON.
    pub fn effective(&self) -> String {
        canonical_json(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<String>,
}

impl ChangeReport {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }
}

/// Break a config into `section` or `section/name` entries.
fn entries(cfg: &BrokerConfig) -> BTreeMap<String, serde_json::Value> {
    let value: serde_json::Value = serde_json::from_str(&cfg.effective()).expect("canonical json");
    let mut out = BTreeMap::new();
    for (section, v) in value.as_object().expect("config is an object") {
        match (section.as_str(), v) {
            ("issuers" | "experiments", serde_json::Value::Object(m)) => {
                for (name, entry) in m {
                    out.insert(format!("{section}/{name}"), entry.clone());
                }
            }
            _ => {
                out.insert(section.clone(), v.clone());
            }
        }
    }
    out
}

pub fn diff(old: &BrokerConfig, new: &BrokerConfig) -> ChangeReport {
    let a = entries(old);
    let b = entries(new);
    let mut report = ChangeReport::default();
    for (path, v) in &b {
        match a.get(path) {
            None => report.added.push(path.clone()),
            Some(old) if old != v => report.modified.push(path.clone()),
            _ => {}
        }
    }
    report.removed = a.keys().filter(|p| !b.contains_key(*p)).cloned().collect();
    report
}
