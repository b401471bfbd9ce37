//! Robot config files.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed robot config: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("invalid robot config: {0}")]
    Invalid(String),
}

/// Where a robot's broker token must end up on one node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Destination {
    pub node: String,
    pub path: PathBuf,
}

impl Destination {
    pub fn label(&self) -> String {
        format!("node:{}:{}", self.node, self.path.display())
    }
}

/// ```yaml
/// principal: dunepro
/// experiment: dune
/// role: production
/// credstores: [https://schedd01.example/credstore]
/// destinations:
///   - node: dunegpvm01
///     path: /home/dunepro/.vt/vt_dunepro
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub principal: String,
    pub experiment: String,
    pub role: String,
    #[serde(default)]
    pub credstores: Vec<String>,
    #[serde(default)]
    pub destinations: Vec<Destination>,
}

pub fn credstore_label(url: &str) -> String {
    format!("credstore:{url}")
}

fn plain_name(what: &str, s: &str) -> Result<(), ConfigError> {
    let ok = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !s.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "{what} {s:?} must be a plain name"
        )))
    }
}

impl RobotConfig {
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RobotConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("robot config serializes")
    }

    /// Stable identifier, also used in state file names.
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.experiment, self.role, self.principal)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        plain_name("principal", &self.principal)?;
        plain_name("experiment", &self.experiment)?;
        plain_name("role", &self.role)?;
        if self.credstores.is_empty() && self.destinations.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one credstore or destination is required".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for url in &self.credstores {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(ConfigError::Invalid(format!(
                    "credstore {url:?} is not an http(s) URL"
                )));
            }
            if !seen.insert(credstore_label(url)) {
                return Err(ConfigError::Invalid(format!(
                    "credstore {url} listed twice"
                )));
            }
        }
        for d in &self.destinations {
            plain_name("node", &d.node)?;
            if d.path
                .components()
                .any(|c| matches!(c, Component::ParentDir))
                || d.path.file_name().is_none()
            {
                return Err(ConfigError::Invalid(format!(
                    "destination path {} is not a file path",
                    d.path.display()
                )));
            }
            if !seen.insert(d.label()) {
                return Err(ConfigError::Invalid(format!(
                    "destination {} listed twice",
                    d.label()
                )));
            }
        }
        Ok(())
    }

    /// Every destination label, credstores first, in config order.
    pub fn labels(&self) -> Vec<String> {
        self.credstores
            .iter()
            .map(|u| credstore_label(u))
            .chain(self.destinations.iter().map(Destination::label))
            .collect()
    }
}
