use std::collections::{BTreeMap, BTreeSet};

use gridtoken_core::scope::parse_scope;
use gridtoken_registry::{
    apply_change, export_directory, generate_configs, replay, Change, RegistryError, RegistryState,
    SHARED_ISSUER,
};
use proptest::prelude::*;

const BASE: &str = "https://issuer.test";

// ---------------------------------------------------------------------------
// Random change sequences. Generation tracks which entities exist so that most
// changes are valid; invalid ones are kept too and must be rejected without
// touching the state.
// ---------------------------------------------------------------------------

const USERS: [&str; 6] = ["alice", "bob", "carol", "dave", "erin", "frank"];
const EXPS: [&str; 6] = ["dune", "gm2", "mu2e", "icarus", "sbnd", "nova"];
const ROLES: [&str; 3] = ["production", "analysis", "calib"];

fn scope_texts(exp: &str) -> Vec<String> {
    vec![
        "compute.create".into(),
        "compute.read".into(),
        "compute.cancel".into(),
        format!("storage.read:/{exp}"),
        format!("storage.create:/{exp}/scratch"),
        format!("storage.modify:/{exp}/persistent"),
    ]
}

fn raw_change() -> impl Strategy<Value = Change> {
    let user = prop::sample::select(USERS.to_vec());
    let exp = prop::sample::select(EXPS.to_vec());
    let role = prop::sample::select(ROLES.to_vec());
    prop_oneof![
        user.clone().prop_map(|u| Change::AddUser {
            id: u.into(),
            display_name: u.to_uppercase()
        }),
        (exp.clone(), any::<bool>()).prop_map(|(e, d)| Change::AddExperiment {
            name: e.into(),
            dedicated_issuer: d,
            storage_prefix: None,
        }),
        (
            exp.clone(),
            role.clone(),
            prop::collection::vec(0usize..6, 0..4)
        )
            .prop_map(|(e, r, idx)| {
                let all = scope_texts(e);
                Change::SetRoleScopes {
                    experiment: e.into(),
                    role: r.into(),
                    scopes: idx.into_iter().map(|i| all[i].clone()).collect(),
                }
            }),
        (user.clone(), exp, role).prop_map(|(u, e, r)| Change::AssignRole {
            user: u.into(),
            experiment: e.into(),
            role: r.into(),
        }),
        user.prop_map(|u| Change::DeactivateUser { id: u.into() }),
    ]
}

/// Fold a raw sequence, dropping rejected changes. Returns the accepted ones.
fn accepted(raw: &[Change]) -> (RegistryState, Vec<Change>) {
    let mut state = RegistryState::default();
    let mut ok = Vec::new();
    for c in raw {
        if let Ok(next) = apply_change(&state, c) {
            state = next;
            ok.push(c.clone());
        }
    }
    (state, ok)
}

// ---------------------------------------------------------------------------
// Oracles built straight from the state maps.
// ---------------------------------------------------------------------------

fn oracle_member_pairs(s: &RegistryState) -> BTreeSet<(String, String, String)> {
    s.assignments
        .iter()
        .filter(|a| s.users[&a.user].active)
        .map(|a| (a.user.clone(), a.experiment.clone(), a.role.clone()))
        .collect()
}

/// Flatten (experiment, role, scope) triples with multiplicity.
fn oracle_triples(s: &RegistryState) -> BTreeMap<(String, String, String), usize> {
    let mut out = BTreeMap::new();
    for (e, roles) in &s.role_scopes {
        for (r, scopes) in roles {
            for sc in scopes {
                *out.entry((e.clone(), r.clone(), sc.to_string()))
                    .or_default() += 1;
            }
        }
    }
    out
}

fn fixture(n: usize, dedicated: usize) -> Vec<Change> {
    let mut cs = Vec::new();
    for i in 0..n {
        let name = format!("exp{i:02}");
        cs.push(Change::AddExperiment {
            name: name.clone(),
            dedicated_issuer: i < dedicated,
            storage_prefix: None,
        });
        cs.push(Change::SetRoleScopes {
            experiment: name.clone(),
            role: "production".into(),
            scopes: vec!["compute.create".into(), format!("storage.create:/{name}")],
        });
        cs.push(Change::SetRoleScopes {
            experiment: name.clone(),
            role: "analysis".into(),
            scopes: vec![format!("storage.read:/{name}")],
        });
    }
    cs
}

#[test]
fn thirty_experiments_five_dedicated() {
    let s = replay(&fixture(30, 5)).unwrap();
    let cfg = generate_configs(&s, BASE);
    assert_eq!(cfg.issuers.len(), 6);
    assert_eq!(cfg.broker.len(), 30);
    assert_eq!(cfg.issuers[SHARED_ISSUER].experiments.len(), 25);
    for i in 0..5 {
        let name = format!("exp{i:02}");
        assert_eq!(cfg.issuers[&name].experiments.len(), 1);
        assert_eq!(cfg.broker[&name].issuer_url, format!("{BASE}/{name}"));
    }
    assert_eq!(
        cfg.broker["exp29"].issuer_url,
        format!("{BASE}/{SHARED_ISSUER}")
    );
}

#[test]
fn fixture_triples_each_appear_once_in_issuer_config() {
    let s = replay(&fixture(30, 5)).unwrap();
    let cfg = generate_configs(&s, BASE);
    let mut seen: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for entry in cfg.issuers.values() {
        for (e, grant) in &entry.experiments {
            for (r, scopes) in &grant.roles {
                for sc in scopes {
                    *seen.entry((e.clone(), r.clone(), sc.clone())).or_default() += 1;
                }
            }
        }
    }
    assert_eq!(seen, oracle_triples(&s));
    assert_eq!(seen.len(), 30 * 3);
}

#[test]
fn canonical_output_is_byte_stable() {
    let s = replay(&fixture(7, 2)).unwrap();
    let a = generate_configs(&s, BASE).to_canonical_json();
    let b = generate_configs(&s, BASE).to_canonical_json();
    assert_eq!(a, b);
    let d1 = export_directory(&s).to_canonical_json();
    let d2 = export_directory(&s).to_canonical_json();
    assert_eq!(d1, d2);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn rejected_change_leaves_state_untouched() {
    let s = replay(&fixture(2, 1)).unwrap();
    let before = s.clone();
    let err = apply_change(
        &s,
        &Change::AssignRole {
            user: "ghost".into(),
            experiment: "exp00".into(),
            role: "production".into(),
        },
    )
    .unwrap_err();
    assert!(matches!(err, RegistryError::Dangling { kind: "user", .. }));
    assert_eq!(s, before);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_sequences_keep_invariants_and_replay(raw in prop::collection::vec(raw_change(), 0..60)) {
        let (state, ok) = accepted(&raw);
        prop_assert!(state.check_invariants().is_ok(), "{:?}", state.check_invariants());
        prop_assert_eq!(state.serial as usize, ok.len());
        let replayed = replay(&ok).unwrap();
        prop_assert_eq!(replayed, state);
    }

    #[test]
    fn directory_parts_consistent(raw in prop::collection::vec(raw_change(), 0..60)) {
        let (state, _) = accepted(&raw);
        let doc = export_directory(&state);
        let part1: BTreeSet<(String, String, String)> = doc
            .members
            .iter()
            .flat_map(|m| m.roles.iter().map(move |r| (m.user.clone(), r.experiment.clone(), r.role.clone())))
            .collect();
        prop_assert_eq!(&part1, &oracle_member_pairs(&state));
        let part2: BTreeSet<(String, String)> =
            doc.capabilities.iter().map(|c| (c.experiment.clone(), c.role.clone())).collect();
        let referenced: BTreeSet<(String, String)> = part1.iter().map(|(_, e, r)| (e.clone(), r.clone())).collect();
        prop_assert_eq!(part2, referenced);
        for c in &doc.capabilities {
            let want: BTreeSet<String> = state.role_scopes[&c.experiment][&c.role].iter().map(|s| s.to_string()).collect();
            prop_assert_eq!(c.scopes.iter().cloned().collect::<BTreeSet<_>>(), want);
        }
        let users: Vec<&String> = doc.members.iter().map(|m| &m.user).collect();
        let mut sorted = users.clone();
        sorted.sort();
        prop_assert_eq!(users, sorted);
    }

    #[test]
    fn configs_flatten_and_count(raw in prop::collection::vec(raw_change(), 0..60)) {
        let (state, _) = accepted(&raw);
        let cfg = generate_configs(&state, BASE);
        let mut seen: BTreeMap<(String, String, String), usize> = BTreeMap::new();
        for (issuer, entry) in &cfg.issuers {
            for (e, grant) in &entry.experiments {
                prop_assert_eq!(state.issuer_of(e), Some(issuer.as_str()));
                for (r, scopes) in &grant.roles {
                    for sc in scopes {
                        prop_assert!(parse_scope(sc).is_ok(), "orphan scope {}", sc);
                        *seen.entry((e.clone(), r.clone(), sc.clone())).or_default() += 1;
                    }
                }
            }
        }
        prop_assert_eq!(seen, oracle_triples(&state));
        prop_assert_eq!(cfg.broker.len(), state.experiments.len());
        // Every broker role is honored by exactly one issuer entry.
        for (e, b) in &cfg.broker {
            for r in &b.roles {
                let honoring = cfg.issuers.values().filter(|i| i.experiments.get(e).is_some_and(|g| g.roles.contains_key(r))).count();
                prop_assert_eq!(honoring, 1);
            }
        }
    }

    #[test]
    fn distinct_adds_commute(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle()) {
        let adds: Vec<Change> = (0..4)
            .map(|i| Change::AddUser { id: USERS[i].into(), display_name: String::new() })
            .chain((0..4).map(|i| Change::AddExperiment {
                name: EXPS[i].into(),
                dedicated_issuer: i % 2 == 0,
                storage_prefix: None,
            }))
            .collect();
        let shuffled: Vec<Change> = perm.iter().map(|&i| adds[i].clone()).collect();
        prop_assert_eq!(replay(&shuffled).unwrap(), replay(&adds).unwrap());
    }
}
