//! WLCG-profile scopes.
//!
//! A scope is an authorization name, optionally qualified by an absolute
//! path for the `storage.*` family. Path qualification is hierarchical:
//! `storage.read:/dune` grants `storage.read:/dune/raw` but not
//! `storage.read:/dunesw`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error("empty scope string")]
    Empty,
    #[error("unknown authorization name `{0}`")]
    UnknownAuthz(String),
    #[error("malformed scope path `{path}`: {reason}")]
    MalformedPath { path: String, reason: &'static str },
}

/// The authorization vocabulary. Anything else is rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Authz {
    ComputeCreate,
    ComputeRead,
    ComputeModify,
    ComputeCancel,
    StorageRead,
    StorageCreate,
    StorageModify,
}

impl Authz {
    pub const ALL: [Authz; 7] = [
        Authz::ComputeCreate,
        Authz::ComputeRead,
        Authz::ComputeModify,
        Authz::ComputeCancel,
        Authz::StorageRead,
        Authz::StorageCreate,
        Authz::StorageModify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Authz::ComputeCreate => "compute.create",
            Authz::ComputeRead => "compute.read",
            Authz::ComputeModify => "compute.modify",
            Authz::ComputeCancel => "compute.cancel",
            Authz::StorageRead => "storage.read",
            Authz::StorageCreate => "storage.create",
            Authz::StorageModify => "storage.modify",
        }
    }

    /// Only storage authorizations may carry a path.
    pub fn allows_path(self) -> bool {
        matches!(
            self,
            Authz::StorageRead | Authz::StorageCreate | Authz::StorageModify
        )
    }
}

impl FromStr for Authz {
    type Err = ScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Authz::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ScopeError::UnknownAuthz(s.to_string()))
    }
}

impl fmt::Display for Authz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An absolute, normalized path. `/` is the root and has no segments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScopePath {
    segments: Vec<String>,
}

impl ScopePath {
    pub fn root() -> Self {
        ScopePath {
            segments: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScopeError> {
        let malformed = |reason| ScopeError::MalformedPath {
            path: text.to_string(),
            reason,
        };
        let rest = text
            .strip_prefix('/')
            .ok_or_else(|| malformed("path must begin with `/`"))?;
        if rest.is_empty() {
            return Ok(Self::root());
        }
        let mut segments = Vec::new();
        for seg in rest.split('/') {
            match seg {
                "" => return Err(malformed("empty path segment")),
                "." | ".." => return Err(malformed("relative path segment")),
                s => segments.push(s.to_string()),
            }
        }
        Ok(ScopePath { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn is_prefix_of(&self, other: &ScopePath) -> bool {
        other.segments.starts_with(&self.segments)
    }

    pub fn join(&self, segment: &str) -> Result<ScopePath, ScopeError> {
        let mut text = self.to_string();
        if !text.ends_with('/') {
            text.push('/');
        }
        text.push_str(segment);
        ScopePath::parse(&text)
    }
}

impl fmt::Display for ScopePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segments.is_empty() {
            return f.write_str("/");
        }
        for seg in &self.segments {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scope {
    authz: Authz,
    path: Option<ScopePath>,
}

impl Scope {
    pub fn new(authz: Authz, path: Option<ScopePath>) -> Result<Self, ScopeError> {
        if let Some(p) = &path {
            if !authz.allows_path() {
                return Err(ScopeError::MalformedPath {
                    path: p.to_string(),
                    reason: "compute scopes cannot carry a path",
                });
            }
        }
        Ok(Scope { authz, path })
    }

    pub fn bare(authz: Authz) -> Self {
        Scope { authz, path: None }
    }

    pub fn authz(&self) -> Authz {
        self.authz
    }

    pub fn path(&self) -> Option<&ScopePath> {
        self.path.as_ref()
    }

    /// Whether holding `self` is enough to perform `requested`.
    pub fn subsumes(&self, requested: &Scope) -> bool {
        if self.authz != requested.authz {
            return false;
        }
        match (&self.path, &requested.path) {
            (None, None) => true,
            (Some(granted), Some(req)) => granted.is_prefix_of(req),
            _ => false,
        }
    }
}

pub fn parse_scope(text: &str) -> Result<Scope, ScopeError> {
    text.parse()
}

impl FromStr for Scope {
    type Err = ScopeError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        if text.is_empty() {
            return Err(ScopeError::Empty);
        }
        match text.split_once(':') {
            None => Scope::new(text.parse()?, None),
            Some((authz, path)) => Scope::new(authz.parse()?, Some(ScopePath::parse(path)?)),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            None => write!(f, "{}", self.authz),
            Some(p) => write!(f, "{}:{}", self.authz, p),
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// True iff some scope in `granted` subsumes `requested`.
pub fn covered_by(granted: &[Scope], requested: &Scope) -> bool {
    granted.iter().any(|g| g.subsumes(requested))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("requested scope `{0}` is not covered by the grant")]
pub struct DownscopeRefused(pub Scope);

/// Reduce a grant to the requested scopes.
///
/// An empty request means no reduction and yields the grant unchanged.
/// Duplicate requests collapse; the order of first appearance is kept.
pub fn downscope(granted: &[Scope], requested: &[Scope]) -> Result<Vec<Scope>, DownscopeRefused> {
    if requested.is_empty() {
        return Ok(granted.to_vec());
    }
    let mut out: Vec<Scope> = Vec::with_capacity(requested.len());
    for req in requested {
        if !covered_by(granted, req) {
            return Err(DownscopeRefused(req.clone()));
        }
        if !out.contains(req) {
            out.push(req.clone());
        }
    }
    Ok(out)
}

/// Parse a space- or comma-separated scope list.
pub fn parse_scope_list(text: &str) -> Result<Vec<Scope>, ScopeError> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(parse_scope)
        .collect()
}

pub fn join_scopes(scopes: &[Scope]) -> String {
    scopes
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}
