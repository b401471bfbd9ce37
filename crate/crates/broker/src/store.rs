//! Encrypted-at-rest secret store: refresh-token records, broker-token
//! hashes and robot key enrollments, sealed with a service master key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use gridtoken_core::fsutil::write_private_atomic;
use gridtoken_core::secret::SecretString;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("secret store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("secret store cannot be unsealed (wrong master key or corrupt file)")]
    Unseal,
    #[error("secret store contents invalid: {0}")]
    Format(String),
    #[error("master key must be 32 bytes hex")]
    BadKey,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub experiment: String,
    pub role: String,
    pub principal: String,
}

impl RecordKey {
    pub fn new(
        experiment: impl Into<String>,
        role: impl Into<String>,
        principal: impl Into<String>,
    ) -> Self {
        RecordKey {
            experiment: experiment.into(),
            role: role.into(),
            principal: principal.into(),
        }
    }
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}:{}", self.experiment, self.role, self.principal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerSecretRecord {
    pub key: RecordKey,
    pub issuer: String,
    pub refresh_handle: SecretString,
    pub obtained_at: i64,
    pub last_used: i64,
    #[serde(default)]
    pub robot: bool,
}

/// Server-side view of a broker token; the token itself is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub key: RecordKey,
    pub issued_at: i64,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreContents {
    pub records: Vec<BrokerSecretRecord>,
    /// sha256(token) hex -> metadata
    pub tokens: BTreeMap<String, TokenMeta>,
    /// "experiment\u{0}principal" -> hex public key
    pub enrollments: BTreeMap<String, String>,
}

pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

pub fn enrollment_key(experiment: &str, principal: &str) -> String {
    format!("{experiment}\u{0}{principal}")
}

pub struct MasterKey(Key);

impl MasterKey {
    pub fn from_hex(text: &str) -> Result<Self, StoreError> {
        let bytes: [u8; 32] = hex::decode(text.trim())
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or(StoreError::BadKey)?;
        Ok(MasterKey(Key::from(bytes)))
    }

    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut k);
        MasterKey(Key::from(k))
    }

    pub fn to_hex(&self) -> SecretString {
        SecretString::new(hex::encode(self.0))
    }
}

pub struct SealedFile {
    path: PathBuf,
    cipher: ChaCha20Poly1305,
}

impl SealedFile {
    pub fn new(path: impl Into<PathBuf>, key: &MasterKey) -> Self {
        SealedFile {
            path: path.into(),
            cipher: ChaCha20Poly1305::new(&key.0),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> Result<StoreContents, StoreError> {
        let bytes = match std::fs::read(&self.path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(StoreContents::default())
            }
            Err(e) => return Err(e.into()),
        };
        if bytes.len() < 12 {
            return Err(StoreError::Unseal);
        }
        let (nonce, ct) = bytes.split_at(12);
        let nonce: [u8; 12] = nonce.try_into().expect("12-byte prefix");
        let plain = self
            .cipher
            .decrypt(&Nonce::from(nonce), ct)
            .map_err(|_| StoreError::Unseal)?;
        serde_json::from_slice(&plain).map_err(|e| StoreError::Format(e.to_string()))
    }

    pub fn save(&self, contents: &StoreContents) -> Result<(), StoreError> {
        let plain = serde_json::to_vec(contents).expect("store serializes");
        let mut nonce = [0u8; 12];
        rand::rngs::OsRng.fill_bytes(&mut nonce);
        let ct = self
            .cipher
            .encrypt(&Nonce::from(nonce), plain.as_slice())
            .expect("encryption of in-memory buffer");
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        write_private_atomic(&self.path, &out)?;
        Ok(())
    }
}
