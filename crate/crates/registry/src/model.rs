//! Registry state and the changes that evolve it.

use std::collections::{BTreeMap, BTreeSet};

use gridtoken_core::scope::{parse_scope, Scope, ScopeError, ScopePath};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Issuer shared by every experiment without a dedicated one.
pub const SHARED_ISSUER: &str = "fermilab";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown {kind} `{name}`")]
    Dangling { kind: &'static str, name: String },
    #[error("{kind} `{name}` already exists")]
    Duplicate { kind: &'static str, name: String },
    #[error("invalid {kind} `{value}`: {reason}")]
    Invalid {
        kind: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error(transparent)]
    Scope(#[from] ScopeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub display_name: String,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experiment {
    pub name: String,
    pub dedicated_issuer: bool,
    pub storage_prefix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub user: String,
    pub experiment: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Change {
    AddUser {
        id: String,
        #[serde(default)]
        display_name: String,
    },
    AddExperiment {
        name: String,
        #[serde(default)]
        dedicated_issuer: bool,
        /// Only honored for dedicated experiments; shared ones always get `/name`.
        #[serde(default)]
        storage_prefix: Option<String>,
    },
    AssignRole {
        user: String,
        experiment: String,
        role: String,
    },
    SetRoleScopes {
        experiment: String,
        role: String,
        scopes: Vec<String>,
    },
    DeactivateUser {
        id: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryState {
    pub serial: u64,
    pub users: BTreeMap<String, User>,
    pub experiments: BTreeMap<String, Experiment>,
    pub assignments: BTreeSet<Assignment>,
    /// experiment -> role -> scopes
    pub role_scopes: BTreeMap<String, BTreeMap<String, BTreeSet<Scope>>>,
    /// experiment -> issuer name
    pub issuer_assignments: BTreeMap<String, String>,
}

fn is_lower_alnum(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

fn is_role_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

impl RegistryState {
    pub fn role_scopes(&self, experiment: &str, role: &str) -> Option<&BTreeSet<Scope>> {
        self.role_scopes.get(experiment)?.get(role)
    }

    pub fn issuer_of(&self, experiment: &str) -> Option<&str> {
        self.issuer_assignments.get(experiment).map(String::as_str)
    }

    /// Check every invariant. `apply_change` maintains these; this is for
    /// states loaded from disk and for tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        for a in &self.assignments {
            if !self.users.contains_key(&a.user) {
                return Err(format!("assignment references unknown user {}", a.user));
            }
            if !self.experiments.contains_key(&a.experiment) {
                return Err(format!(
                    "assignment references unknown experiment {}",
                    a.experiment
                ));
            }
            if self.role_scopes(&a.experiment, &a.role).is_none() {
                return Err(format!("no scopes for {}/{}", a.experiment, a.role));
            }
        }
        for (name, exp) in &self.experiments {
            let issuer = self
                .issuer_assignments
                .get(name)
                .ok_or_else(|| format!("experiment {name} has no issuer"))?;
            let want = if exp.dedicated_issuer {
                name.as_str()
            } else {
                SHARED_ISSUER
            };
            if issuer != want {
                return Err(format!(
                    "experiment {name} mapped to {issuer}, expected {want}"
                ));
            }
            if !exp.dedicated_issuer && exp.storage_prefix != format!("/{name}") {
                return Err(format!(
                    "shared experiment {name} has prefix {}",
                    exp.storage_prefix
                ));
            }
        }
        if self.issuer_assignments.len() != self.experiments.len() {
            return Err("issuer assignments for unknown experiments".into());
        }
        if self
            .role_scopes
            .keys()
            .any(|e| !self.experiments.contains_key(e))
        {
            return Err("role scopes for unknown experiment".into());
        }
        Ok(())
    }
}

/// Apply one change, returning the successor state with its serial bumped.
/// The input state is left untouched on error.
pub fn apply_change(
    state: &RegistryState,
    change: &Change,
) -> Result<RegistryState, RegistryError> {
    let mut next = state.clone();
    match change {
        Change::AddUser { id, display_name } => {
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(RegistryError::Invalid {
                    kind: "user id",
                    value: id.clone(),
                    reason: "must be non-empty without whitespace",
                });
            }
            if next.users.contains_key(id) {
                return Err(RegistryError::Duplicate {
                    kind: "user",
                    name: id.clone(),
                });
            }
            next.users.insert(
                id.clone(),
                User {
                    id: id.clone(),
                    display_name: display_name.clone(),
                    active: true,
                },
            );
        }
        Change::AddExperiment {
            name,
            dedicated_issuer,
            storage_prefix,
        } => {
            if !is_lower_alnum(name) {
                return Err(RegistryError::Invalid {
                    kind: "experiment name",
                    value: name.clone(),
                    reason: "must be lowercase alphanumeric",
                });
            }
            if *dedicated_issuer && name == SHARED_ISSUER {
                return Err(RegistryError::Invalid {
                    kind: "experiment name",
                    value: name.clone(),
                    reason: "collides with the shared issuer",
                });
            }
            if next.experiments.contains_key(name) {
                return Err(RegistryError::Duplicate {
                    kind: "experiment",
                    name: name.clone(),
                });
            }
            let prefix = match (dedicated_issuer, storage_prefix) {
                (true, Some(p)) => ScopePath::parse(p)?.to_string(),
                _ => format!("/{name}"),
            };
            let issuer = if *dedicated_issuer {
                name.clone()
            } else {
                SHARED_ISSUER.to_string()
            };
            next.experiments.insert(
                name.clone(),
                Experiment {
                    name: name.clone(),
                    dedicated_issuer: *dedicated_issuer,
                    storage_prefix: prefix,
                },
            );
            next.issuer_assignments.insert(name.clone(), issuer);
        }
        Change::SetRoleScopes {
            experiment,
            role,
            scopes,
        } => {
            if !next.experiments.contains_key(experiment) {
                return Err(RegistryError::Dangling {
                    kind: "experiment",
                    name: experiment.clone(),
                });
            }
            if !is_role_name(role) {
                return Err(RegistryError::Invalid {
                    kind: "role",
                    value: role.clone(),
                    reason: "must be lowercase",
                });
            }
            let parsed = scopes
                .iter()
                .map(|s| parse_scope(s))
                .collect::<Result<BTreeSet<_>, _>>()?;
            next.role_scopes
                .entry(experiment.clone())
                .or_default()
                .insert(role.clone(), parsed);
        }
        Change::AssignRole {
            user,
            experiment,
            role,
        } => {
            if !next.users.contains_key(user) {
                return Err(RegistryError::Dangling {
                    kind: "user",
                    name: user.clone(),
                });
            }
            if !next.experiments.contains_key(experiment) {
                return Err(RegistryError::Dangling {
                    kind: "experiment",
                    name: experiment.clone(),
                });
            }
            if next.role_scopes(experiment, role).is_none() {
                return Err(RegistryError::Dangling {
                    kind: "role",
                    name: format!("{experiment}/{role}"),
                });
            }
            let a = Assignment {
                user: user.clone(),
                experiment: experiment.clone(),
                role: role.clone(),
            };
            if !next.assignments.insert(a) {
                return Err(RegistryError::Duplicate {
                    kind: "assignment",
                    name: format!("{user}:{experiment}/{role}"),
                });
            }
        }
        Change::DeactivateUser { id } => {
            let user = next
                .users
                .get_mut(id)
                .ok_or_else(|| RegistryError::Dangling {
                    kind: "user",
                    name: id.clone(),
                })?;
            user.active = false;
        }
    }
    next.serial += 1;
    Ok(next)
}

/// Fold a sequence of changes from the empty state.
pub fn replay<'a, I>(changes: I) -> Result<RegistryState, RegistryError>
where
    I: IntoIterator<Item = &'a Change>,
{
    changes
        .into_iter()
        .try_fold(RegistryState::default(), |s, c| apply_change(&s, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add_exp(name: &str, dedicated: bool) -> Change {
        Change::AddExperiment {
            name: name.into(),
            dedicated_issuer: dedicated,
            storage_prefix: None,
        }
    }

    #[test]
    fn shared_experiment_maps_to_fermilab() {
        let s = apply_change(&RegistryState::default(), &add_exp("gm2", false)).unwrap();
        assert_eq!(s.issuer_assignments["gm2"], SHARED_ISSUER);
        assert_eq!(s.experiments["gm2"].storage_prefix, "/gm2");
        assert_eq!(s.serial, 1);
        let s = apply_change(&s, &add_exp("dune", true)).unwrap();
        assert_eq!(s.issuer_of("dune"), Some("dune"));
        s.check_invariants().unwrap();
    }

    #[test]
    fn assign_before_user_is_dangling() {
        let s = replay(&[
            add_exp("dune", true),
            Change::SetRoleScopes {
                experiment: "dune".into(),
                role: "production".into(),
                scopes: vec!["compute.create".into()],
            },
        ])
        .unwrap();
        let err = apply_change(
            &s,
            &Change::AssignRole {
                user: "alice".into(),
                experiment: "dune".into(),
                role: "production".into(),
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            RegistryError::Dangling {
                kind: "user",
                name: "alice".into()
            }
        );
    }

    #[test]
    fn assign_requires_role_scopes() {
        let s = replay(&[
            add_exp("dune", true),
            Change::AddUser {
                id: "alice".into(),
                display_name: String::new(),
            },
        ])
        .unwrap();
        let err = apply_change(
            &s,
            &Change::AssignRole {
                user: "alice".into(),
                experiment: "dune".into(),
                role: "production".into(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, RegistryError::Dangling { kind: "role", .. }));
    }

    #[test]
    fn rejects_duplicates_and_bad_names() {
        let s = apply_change(&RegistryState::default(), &add_exp("dune", true)).unwrap();
        assert!(matches!(
            apply_change(&s, &add_exp("dune", false)),
            Err(RegistryError::Duplicate { .. })
        ));
        assert!(apply_change(&s, &add_exp("Dune", false)).is_err());
        assert!(apply_change(&s, &add_exp("fermilab", true)).is_err());
        let bad_scope = Change::SetRoleScopes {
            experiment: "dune".into(),
            role: "analysis".into(),
            scopes: vec!["storage.read:data".into()],
        };
        assert!(matches!(
            apply_change(&s, &bad_scope),
            Err(RegistryError::Scope(_))
        ));
    }

    #[test]
    fn change_json_shape() {
        let c: Change = serde_json::from_str(r#"{"op":"add-experiment","name":"gm2"}"#).unwrap();
        assert_eq!(c, add_exp("gm2", false));
        let c: Change = serde_json::from_str(r#"{"op":"deactivate-user","id":"bob"}"#).unwrap();
        assert_eq!(c, Change::DeactivateUser { id: "bob".into() });
    }
}
