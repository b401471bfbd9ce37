//! Projections of the registry: the two-part directory document and the
//! generated issuer/broker configuration.

use std::collections::{BTreeMap, BTreeSet};

use gridtoken_core::canonical::canonical_json;
use gridtoken_core::claims::experiment_group;
use serde::{Deserialize, Serialize};

use crate::model::{RegistryState, SHARED_ISSUER};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExperimentRole {
    pub experiment: String,
    pub role: String,
}

/// Part one: who holds which (experiment, role).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub user: String,
    pub roles: Vec<ExperimentRole>,
}

/// Part two: what each (experiment, role) may do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityEntry {
    pub experiment: String,
    pub role: String,
    pub scopes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryDocument {
    pub serial: u64,
    pub members: Vec<MemberEntry>,
    pub capabilities: Vec<CapabilityEntry>,
}

impl DirectoryDocument {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self).expect("directory serializes")
    }

    pub fn roles_of(&self, user: &str) -> &[ExperimentRole] {
        self.members
            .iter()
            .find(|m| m.user == user)
            .map(|m| m.roles.as_slice())
            .unwrap_or(&[])
    }
}

pub fn export_directory(state: &RegistryState) -> DirectoryDocument {
    let mut members = Vec::new();
    let mut referenced = BTreeSet::new();
    for user in state.users.values().filter(|u| u.active) {
        let roles: Vec<ExperimentRole> = state
            .assignments
            .iter()
            .filter(|a| a.user == user.id)
            .map(|a| ExperimentRole {
                experiment: a.experiment.clone(),
                role: a.role.clone(),
            })
            .collect();
        referenced.extend(roles.iter().cloned());
        members.push(MemberEntry {
            user: user.id.clone(),
            roles,
        });
    }
    let capabilities = referenced
        .into_iter()
        .map(|er| {
            let scopes = state
                .role_scopes(&er.experiment, &er.role)
                .map(|s| s.iter().map(ToString::to_string).collect())
                .unwrap_or_default();
            CapabilityEntry {
                experiment: er.experiment,
                role: er.role,
                scopes,
            }
        })
        .collect();
    DirectoryDocument {
        serial: state.serial,
        members,
        capabilities,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentGrant {
    /// Group claim placed in tokens for this experiment.
    pub group: String,
    pub storage_prefix: String,
    /// role -> scopes
    pub roles: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerEntry {
    pub client_id: String,
    pub shared: bool,
    pub experiments: BTreeMap<String, ExperimentGrant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerEntry {
    pub issuer: String,
    pub issuer_url: String,
    pub roles: Vec<String>,
    pub realm: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedConfig {
    pub serial: u64,
    pub issuers: BTreeMap<String, IssuerEntry>,
    pub broker: BTreeMap<String, BrokerEntry>,
}

impl GeneratedConfig {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self).expect("config serializes")
    }
}

pub fn client_id_for(issuer: &str) -> String {
    format!("broker-{issuer}")
}

pub fn issuer_url(base: &str, issuer: &str) -> String {
    format!("{}/{issuer}", base.trim_end_matches('/'))
}

/// Issuer and broker configuration for every experiment. Shared-issuer
/// experiments collapse under [`SHARED_ISSUER`] on the issuer side but keep
/// their own name on the broker side.
pub fn generate_configs(state: &RegistryState, issuer_base: &str) -> GeneratedConfig {
    let mut out = GeneratedConfig {
        serial: state.serial,
        ..GeneratedConfig::default()
    };
    for (name, exp) in &state.experiments {
        let issuer = if exp.dedicated_issuer {
            name.as_str()
        } else {
            SHARED_ISSUER
        };
        let roles: BTreeMap<String, Vec<String>> = state
            .role_scopes
            .get(name)
            .map(|m| {
                m.iter()
                    .map(|(role, scopes)| {
                        (
                            role.clone(),
                            scopes.iter().map(ToString::to_string).collect(),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default();
        out.broker.insert(
            name.clone(),
            BrokerEntry {
                issuer: issuer.to_string(),
                issuer_url: issuer_url(issuer_base, issuer),
                roles: roles.keys().cloned().collect(),
                realm: name.clone(),
            },
        );
        out.issuers
            .entry(issuer.to_string())
            .or_insert_with(|| IssuerEntry {
                client_id: client_id_for(issuer),
                shared: !exp.dedicated_issuer,
                experiments: BTreeMap::new(),
            })
            .experiments
            .insert(
                name.clone(),
                ExperimentGrant {
                    group: experiment_group(name),
                    storage_prefix: exp.storage_prefix.clone(),
                    roles,
                },
            );
    }
    out
}
