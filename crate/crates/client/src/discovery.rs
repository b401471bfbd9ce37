//! Bearer-token discovery in the standard order: inline variable, file
//! variable, runtime directory, temp directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridtoken_core::secret::SecretString;

pub const BEARER_TOKEN: &str = "BEARER_TOKEN";
pub const BEARER_TOKEN_FILE: &str = "BEARER_TOKEN_FILE";
pub const XDG_RUNTIME_DIR: &str = "XDG_RUNTIME_DIR";
pub const TMPDIR: &str = "TMPDIR";
/// Broker base URL when `--broker` is not given.
pub const GETTOKEN_BROKER: &str = "GETTOKEN_BROKER";
/// Directory for broker-token files; defaults to the temp directory.
pub const GETTOKEN_CREDDIR: &str = "GETTOKEN_CREDDIR";
/// File holding the hex seed of the secondary signing key.
pub const GETTOKEN_SECONDARY_KEY: &str = "GETTOKEN_SECONDARY_KEY";

/// A snapshot of environment variables, so discovery is testable without
/// touching the process environment.
#[derive(Debug, Clone, Default)]
pub struct EnvVars(BTreeMap<String, String>);

impl EnvVars {
    pub fn from_process() -> Self {
        EnvVars(std::env::vars().collect())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    /// Set and non-empty.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    pub fn temp_dir(&self) -> PathBuf {
        PathBuf::from(self.get(TMPDIR).unwrap_or("/tmp"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BearerSource {
    Inline(SecretString),
    File(PathBuf),
}

impl BearerSource {
    /// The token, with surrounding whitespace removed. Unreadable or empty
    /// files give `None`.
    pub fn read(&self) -> Option<String> {
        let text = match self {
            BearerSource::Inline(t) => t.expose().to_string(),
            BearerSource::File(p) => std::fs::read_to_string(p).ok()?,
        };
        let t = text.trim();
        (!t.is_empty()).then(|| t.to_string())
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            BearerSource::File(p) => Some(p),
            BearerSource::Inline(_) => None,
        }
    }
}

pub fn token_file_name(uid: u32) -> String {
    format!("bt_u{uid}")
}

pub fn discover_bearer(env: &EnvVars, uid: u32) -> Option<BearerSource> {
    if let Some(t) = env.get(BEARER_TOKEN) {
        return Some(BearerSource::Inline(SecretString::new(t)));
    }
    if let Some(p) = env.get(BEARER_TOKEN_FILE) {
        let p = PathBuf::from(p);
        if p.is_file() {
            return Some(BearerSource::File(p));
        }
    }
    let name = token_file_name(uid);
    if let Some(dir) = env.get(XDG_RUNTIME_DIR) {
        let p = Path::new(dir).join(&name);
        if p.is_file() {
            return Some(BearerSource::File(p));
        }
    }
    let p = env.temp_dir().join(&name);
    p.is_file().then_some(BearerSource::File(p))
}
