//! Secondary authentication: an Ed25519 signature over a timestamped
//! statement, checked against the principal's enrolled public key.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use gridtoken_core::secret::SecretString;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ASSERTION_WINDOW: i64 = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondaryAssertion {
    pub principal: String,
    pub realm: String,
    pub timestamp: i64,
    /// Hex Ed25519 signature over [`assertion_message`].
    pub signature: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssertionError {
    #[error("assertion timestamp {timestamp} outside +/-{ASSERTION_WINDOW}s of {now}")]
    Stale { timestamp: i64, now: i64 },
    #[error("assertion signature does not verify")]
    BadSignature,
    #[error("malformed key or signature")]
    Malformed,
}

pub fn assertion_message(principal: &str, realm: &str, timestamp: i64) -> String {
    format!("gridtoken-secondary-v1\n{principal}\n{realm}\n{timestamp}")
}

/// A principal's long-lived secondary key.
pub struct SecondaryKey(SigningKey);

impl SecondaryKey {
    pub fn generate() -> Self {
        SecondaryKey(SigningKey::generate(&mut rand::rngs::OsRng))
    }

    pub fn from_seed_hex(text: &str) -> Result<Self, AssertionError> {
        let bytes: [u8; 32] = hex::decode(text.trim())
            .map_err(|_| AssertionError::Malformed)?
            .try_into()
            .map_err(|_| AssertionError::Malformed)?;
        Ok(SecondaryKey(SigningKey::from_bytes(&bytes)))
    }

    pub fn seed_hex(&self) -> SecretString {
        SecretString::new(hex::encode(self.0.to_bytes()))
    }

    pub fn public_hex(&self) -> String {
        hex::encode(self.0.verifying_key().to_bytes())
    }

    pub fn assert(&self, principal: &str, realm: &str, timestamp: i64) -> SecondaryAssertion {
        let sig = self
            .0
            .sign(assertion_message(principal, realm, timestamp).as_bytes());
        SecondaryAssertion {
            principal: principal.into(),
            realm: realm.into(),
            timestamp,
            signature: hex::encode(sig.to_bytes()),
        }
    }
}

impl std::fmt::Debug for SecondaryKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecondaryKey(public={})", self.public_hex())
    }
}

/// Check window then signature.
pub fn check_assertion(
    a: &SecondaryAssertion,
    public_hex: &str,
    now: i64,
) -> Result<(), AssertionError> {
    if (a.timestamp - now).abs() > ASSERTION_WINDOW {
        return Err(AssertionError::Stale {
            timestamp: a.timestamp,
            now,
        });
    }
    let pk: [u8; 32] = hex::decode(public_hex)
        .map_err(|_| AssertionError::Malformed)?
        .try_into()
        .map_err(|_| AssertionError::Malformed)?;
    let key = VerifyingKey::from_bytes(&pk).map_err(|_| AssertionError::Malformed)?;
    let sig: [u8; 64] = hex::decode(&a.signature)
        .map_err(|_| AssertionError::BadSignature)?
        .try_into()
        .map_err(|_| AssertionError::BadSignature)?;
    key.verify(
        assertion_message(&a.principal, &a.realm, a.timestamp).as_bytes(),
        &Signature::from_bytes(&sig),
    )
    .map_err(|_| AssertionError::BadSignature)
}
