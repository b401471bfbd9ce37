//! Minting and offline verification of compact JWT access tokens.
//!
//! Verification is a pure function of the token, the published key set,
//! the policy and the caller's notion of `now`. It never reaches the issuer.

use std::collections::HashSet;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use jsonwebtoken::{Header, Validation};
use thiserror::Error;

use crate::claims::{ClaimError, ClaimSet};
use crate::keys::{KeyError, KeySet, SigningKey};
use crate::scope::{covered_by, Scope};

pub const DEFAULT_CLOCK_SKEW: u64 = 60;

#[derive(Debug, Error)]
pub enum MintError {
    #[error("invalid claims: {0}")]
    Claims(#[from] ClaimError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("signing failed: {0}")]
    Signing(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("unknown key id `{0}`")]
    UnknownKey(String),
    #[error("bad signature")]
    BadSignature,
    #[error("wrong issuer: expected `{expected}`, got `{found}`")]
    WrongIssuer { expected: String, found: String },
    #[error("token expired at {exp} (now {now})")]
    Expired { exp: i64, now: i64 },
    #[error("token not valid before {nbf} (now {now})")]
    NotYetValid { nbf: i64, now: i64 },
    #[error("no acceptable audience in {0:?}")]
    AudienceMismatch(Vec<String>),
    #[error("token lacks scope `{0}`")]
    InsufficientScope(Scope),
}

impl VerifyError {
    /// Stable machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            VerifyError::Malformed(_) => "malformed",
            VerifyError::UnknownKey(_) => "unknown_key",
            VerifyError::BadSignature => "bad_signature",
            VerifyError::WrongIssuer { .. } => "wrong_issuer",
            VerifyError::Expired { .. } => "expired",
            VerifyError::NotYetValid { .. } => "not_yet_valid",
            VerifyError::AudienceMismatch(_) => "audience_mismatch",
            VerifyError::InsufficientScope(_) => "insufficient_scope",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyPolicy {
    pub issuer: String,
    /// `None` skips the audience check. Otherwise the token's audience list
    /// must intersect this one; include [`crate::ANY_AUDIENCE`] to accept
    /// catch-all tokens.
    pub audiences: Option<Vec<String>>,
    pub required_scopes: Vec<Scope>,
    pub skew: u64,
}

impl VerifyPolicy {
    /// Issuer check only: any audience, no required scopes, default skew.
    pub fn permissive(issuer: impl Into<String>) -> Self {
        VerifyPolicy {
            issuer: issuer.into(),
            audiences: None,
            required_scopes: Vec::new(),
            skew: DEFAULT_CLOCK_SKEW,
        }
    }

    pub fn with_audiences<I, S>(mut self, auds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.audiences = Some(auds.into_iter().map(Into::into).collect());
        self
    }

    pub fn requiring(mut self, scope: Scope) -> Self {
        self.required_scopes.push(scope);
        self
    }
}

pub fn mint(claims: &ClaimSet, key: &SigningKey) -> Result<String, MintError> {
    claims.validate()?;
    let mut header = Header::new(key.algorithm().to_jwt());
    header.kid = Some(key.kid().to_string());
    jsonwebtoken::encode(&header, claims, key.encoding_key())
        .map_err(|e| MintError::Signing(e.to_string()))
}

pub fn verify(
    token: &str,
    keys: &KeySet,
    policy: &VerifyPolicy,
    now: i64,
) -> Result<ClaimSet, VerifyError> {
    let header =
        jsonwebtoken::decode_header(token).map_err(|e| VerifyError::Malformed(e.to_string()))?;
    let kid = header
        .kid
        .ok_or_else(|| VerifyError::Malformed("header has no key id".into()))?;
    let jwk = keys
        .get(&kid)
        .ok_or_else(|| VerifyError::UnknownKey(kid.clone()))?;
    if header.alg != jwk.alg.to_jwt() {
        return Err(VerifyError::Malformed(format!(
            "header algorithm {:?} does not match key `{kid}`",
            header.alg
        )));
    }
    let decoding = jwk
        .decoding_key()
        .map_err(|e| VerifyError::Malformed(e.to_string()))?;

    let mut validation = Validation::new(header.alg);
    validation.validate_exp = false;
    validation.validate_nbf = false;
    validation.validate_aud = false;
    validation.required_spec_claims = HashSet::new();
    let data =
        jsonwebtoken::decode::<serde_json::Value>(token, &decoding, &validation).map_err(|e| {
            use jsonwebtoken::errors::ErrorKind;
            match e.kind() {
                ErrorKind::InvalidSignature
                | ErrorKind::InvalidEcdsaKey
                | ErrorKind::InvalidRsaKey(_) => VerifyError::BadSignature,
                _ => VerifyError::Malformed(e.to_string()),
            }
        })?;
    let claims: ClaimSet =
        serde_json::from_value(data.claims).map_err(|e| VerifyError::Malformed(e.to_string()))?;
    claims
        .validate()
        .map_err(|e| VerifyError::Malformed(e.to_string()))?;

    if claims.iss != policy.issuer {
        return Err(VerifyError::WrongIssuer {
            expected: policy.issuer.clone(),
            found: claims.iss,
        });
    }
    let skew = i64::try_from(policy.skew).unwrap_or(i64::MAX);
    if now > claims.exp.saturating_add(skew) {
        return Err(VerifyError::Expired {
            exp: claims.exp,
            now,
        });
    }
    if now < claims.nbf.saturating_sub(skew) {
        return Err(VerifyError::NotYetValid {
            nbf: claims.nbf,
            now,
        });
    }
    if let Some(accepted) = &policy.audiences {
        if !claims.aud.iter().any(|a| accepted.contains(a)) {
            return Err(VerifyError::AudienceMismatch(claims.aud));
        }
    }
    if let Some(missing) = policy
        .required_scopes
        .iter()
        .find(|req| !covered_by(&claims.scope, req))
    {
        return Err(VerifyError::InsufficientScope(missing.clone()));
    }
    Ok(claims)
}

/// Decode claims without checking the signature. For holders inspecting
/// their own tokens (expiry, scopes); never for authorization decisions.
pub fn peek_claims(token: &str) -> Result<ClaimSet, VerifyError> {
    let mut parts = token.trim().split('.');
    let payload = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(_), Some(p), Some(_), None) => p,
        _ => return Err(VerifyError::Malformed("expected three segments".into())),
    };
    let bytes = URL_SAFE_NO_PAD
        .decode(payload)
        .map_err(|e| VerifyError::Malformed(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| VerifyError::Malformed(e.to_string()))
}

/// Issuer named in an unverified token, used to pick which key set to try.
pub fn peek_issuer(token: &str) -> Result<String, VerifyError> {
    peek_claims(token).map(|c| c.iss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::{ANY_AUDIENCE, PROFILE_VERSION};
    use crate::keys::KeyRing;

    const ISS: &str = "https://issuer.test/dune";

    fn claims(iat: i64) -> ClaimSet {
        ClaimSet {
            iss: ISS.into(),
            sub: "alice".into(),
            aud: vec![ANY_AUDIENCE.into()],
            exp: iat + 10_800,
            iat,
            nbf: iat,
            jti: "jti-1".into(),
            scope: vec!["compute.create".parse().unwrap()],
            groups: vec!["/dune".into()],
            ver: PROFILE_VERSION.into(),
        }
    }

    #[test]
    fn three_hour_token_round_trips() {
        let key = SigningKey::generate("k1");
        let ring = KeyRing::new(key);
        let token = mint(&claims(1000), ring.current()).unwrap();
        assert_eq!(token.split('.').count(), 3);
        let got = verify(
            &token,
            &ring.public_set(),
            &VerifyPolicy::permissive(ISS),
            1000,
        )
        .unwrap();
        assert_eq!(got.lifetime(), 10_800);
        assert_eq!(got, claims(1000));
    }

    #[test]
    fn mint_rejects_inverted_times() {
        let key = SigningKey::generate("k1");
        let mut c = claims(1000);
        c.exp = c.iat - 5;
        assert!(matches!(mint(&c, &key), Err(MintError::Claims(_))));
    }

    #[test]
    fn expiry_boundary_honors_skew() {
        let ring = KeyRing::new(SigningKey::generate("k1"));
        let c = claims(1000);
        let token = mint(&c, ring.current()).unwrap();
        let policy = VerifyPolicy::permissive(ISS);
        let skew = policy.skew as i64;
        assert!(verify(&token, &ring.public_set(), &policy, c.exp + skew).is_ok());
        assert!(matches!(
            verify(&token, &ring.public_set(), &policy, c.exp + skew + 1),
            Err(VerifyError::Expired { .. })
        ));
        assert!(matches!(
            verify(&token, &ring.public_set(), &policy, c.nbf - skew - 1),
            Err(VerifyError::NotYetValid { .. })
        ));
    }

    #[test]
    fn key_from_other_ring_is_unknown() {
        let a = KeyRing::new(SigningKey::generate("key-a"));
        let b = KeyRing::new(SigningKey::generate("key-b"));
        let token = mint(&claims(1000), a.current()).unwrap();
        let err = verify(
            &token,
            &b.public_set(),
            &VerifyPolicy::permissive(ISS),
            1000,
        )
        .unwrap_err();
        assert_eq!(err, VerifyError::UnknownKey("key-a".into()));
    }

    #[test]
    fn same_kid_different_key_is_bad_signature() {
        let a = KeyRing::new(SigningKey::generate("k"));
        let b = KeyRing::new(SigningKey::generate("k"));
        let token = mint(&claims(1000), a.current()).unwrap();
        let err = verify(
            &token,
            &b.public_set(),
            &VerifyPolicy::permissive(ISS),
            1000,
        )
        .unwrap_err();
        assert_eq!(err, VerifyError::BadSignature);
    }

    #[test]
    fn distinct_error_categories() {
        let ring = KeyRing::new(SigningKey::generate("k1"));
        let keys = ring.public_set();
        let token = mint(&claims(1000), ring.current()).unwrap();
        let e = verify(
            &token,
            &keys,
            &VerifyPolicy::permissive("https://elsewhere"),
            1000,
        )
        .unwrap_err();
        assert_eq!(e.kind(), "wrong_issuer");
        let p = VerifyPolicy::permissive(ISS).with_audiences(["https://rcds.test"]);
        assert_eq!(
            verify(&token, &keys, &p, 1000).unwrap_err().kind(),
            "audience_mismatch"
        );
        let p = VerifyPolicy::permissive(ISS).with_audiences([ANY_AUDIENCE]);
        assert!(verify(&token, &keys, &p, 1000).is_ok());
        let p = VerifyPolicy::permissive(ISS).requiring("storage.read:/dune".parse().unwrap());
        assert_eq!(
            verify(&token, &keys, &p, 1000).unwrap_err().kind(),
            "insufficient_scope"
        );
        assert_eq!(
            verify("not-a-token", &keys, &VerifyPolicy::permissive(ISS), 1000)
                .unwrap_err()
                .kind(),
            "malformed"
        );
    }

    #[test]
    fn compute_create_policy_accepts() {
        let ring = KeyRing::new(SigningKey::generate("k1"));
        let token = mint(&claims(1000), ring.current()).unwrap();
        let p = VerifyPolicy::permissive(ISS).requiring("compute.create".parse().unwrap());
        assert!(verify(&token, &ring.public_set(), &p, 1000).is_ok());
    }

    #[test]
    fn peek_matches_verified_claims() {
        let ring = KeyRing::new(SigningKey::generate("k1"));
        let token = mint(&claims(50), ring.current()).unwrap();
        assert_eq!(peek_claims(&token).unwrap(), claims(50));
        assert_eq!(peek_issuer(&token).unwrap(), ISS);
        assert!(peek_claims("a.b").is_err());
    }
}
