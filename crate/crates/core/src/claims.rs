//! Access-token claims and their JSON wire form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scope::{join_scopes, parse_scope_list, Scope};

/// Catch-all audience accepted by any relying party that opts into it.
pub const ANY_AUDIENCE: &str = "https://wlcg.cern.ch/jwt/v1/any";

pub const PROFILE_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClaimError {
    #[error("claim `{0}` must not be empty")]
    Empty(&'static str),
    #[error("time claims out of order: iat={iat} nbf={nbf} exp={exp}")]
    TimeOrder { iat: i64, nbf: i64, exp: i64 },
    #[error("malformed group `{0}`")]
    Group(String),
    #[error("bad scope claim: {0}")]
    Scope(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimSet {
    pub iss: String,
    pub sub: String,
    pub aud: Vec<String>,
    pub exp: i64,
    pub iat: i64,
    pub nbf: i64,
    pub jti: String,
    pub scope: Vec<Scope>,
    pub groups: Vec<String>,
    pub ver: String,
}

impl ClaimSet {
    pub fn validate(&self) -> Result<(), ClaimError> {
        if self.iss.is_empty() {
            return Err(ClaimError::Empty("iss"));
        }
        if self.sub.is_empty() {
            return Err(ClaimError::Empty("sub"));
        }
        if self.jti.is_empty() {
            return Err(ClaimError::Empty("jti"));
        }
        if self.aud.is_empty() || self.aud.iter().any(String::is_empty) {
            return Err(ClaimError::Empty("aud"));
        }
        if !(self.iat <= self.nbf && self.nbf <= self.exp && self.exp > self.iat) {
            return Err(ClaimError::TimeOrder {
                iat: self.iat,
                nbf: self.nbf,
                exp: self.exp,
            });
        }
        for g in &self.groups {
            validate_group(g)?;
        }
        Ok(())
    }

    pub fn lifetime(&self) -> i64 {
        self.exp - self.iat
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.groups.iter().any(|g| g == group)
    }
}

/// Groups are `/experiment` or `/experiment/role`.
pub fn validate_group(group: &str) -> Result<(), ClaimError> {
    let bad = || ClaimError::Group(group.to_string());
    let rest = group.strip_prefix('/').ok_or_else(bad)?;
    let segments: Vec<&str> = rest.split('/').collect();
    if segments.is_empty() || segments.len() > 2 || segments.iter().any(|s| s.is_empty()) {
        return Err(bad());
    }
    Ok(())
}

pub fn experiment_group(experiment: &str) -> String {
    format!("/{experiment}")
}

pub fn role_group(experiment: &str, role: &str) -> String {
    format!("/{experiment}/{role}")
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AudienceWire {
    One(String),
    Many(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct WireClaims {
    iss: String,
    sub: String,
    aud: AudienceWire,
    exp: i64,
    iat: i64,
    nbf: i64,
    jti: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    scope: String,
    #[serde(rename = "wlcg.groups", default, skip_serializing_if = "Vec::is_empty")]
    groups: Vec<String>,
    #[serde(rename = "wlcg.ver")]
    ver: String,
}

impl Serialize for ClaimSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let aud = match self.aud.as_slice() {
            [one] => AudienceWire::One(one.clone()),
            many => AudienceWire::Many(many.to_vec()),
        };
        WireClaims {
            iss: self.iss.clone(),
            sub: self.sub.clone(),
            aud,
            exp: self.exp,
            iat: self.iat,
            nbf: self.nbf,
            jti: self.jti.clone(),
            scope: join_scopes(&self.scope),
            groups: self.groups.clone(),
            ver: self.ver.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ClaimSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireClaims::deserialize(deserializer)?;
        let scope = parse_scope_list(&wire.scope).map_err(serde::de::Error::custom)?;
        Ok(ClaimSet {
            iss: wire.iss,
            sub: wire.sub,
            aud: match wire.aud {
                AudienceWire::One(a) => vec![a],
                AudienceWire::Many(a) => a,
            },
            exp: wire.exp,
            iat: wire.iat,
            nbf: wire.nbf,
            jti: wire.jti,
            scope,
            groups: wire.groups,
            ver: wire.ver,
        })
    }
}
