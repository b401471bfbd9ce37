mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use gridtoken_core::fsutil::mode_of;
use gridtoken_core::SecretString;
use gridtoken_robotmgr::{
    LocalDirTransport, PushError, PushTransport, Renewal, RobotConfig, RobotManager,
};
use gridtoken_testbed::stack::{DAY, HOUR};
use proptest::prelude::*;

async fn onboarded(env: &Env, configs: &[RobotConfig]) -> RobotManager {
    let mgr = env.manager();
    for c in configs {
        let (_, report) = mgr
            .onboard(&env.operator(&c.principal, true), &env.admin(), c.clone())
            .await
            .unwrap();
        assert!(report.all_ok(), "{report:?}");
    }
    mgr
}

fn token_in(bytes: &[u8]) -> SecretString {
    SecretString::new(String::from_utf8(bytes.to_vec()).unwrap().trim())
}

#[tokio::test]
async fn token_with_half_a_day_left_is_renewed_and_redelivered() {
    let env = env();
    let mgr = onboarded(&env, &[dunepro()]).await;
    let dest = env.node_file(&dunepro().destinations[0]);
    let old = std::fs::read(&dest).unwrap();
    let exp = mgr.status().await.unwrap()[0].token_expires_at;

    env.stack.clock.set(exp - 12 * HOUR);
    let report = mgr.run_cycle().await.unwrap();
    let r = &report.robots[0];
    let Renewal::Renewed { expires_at } = r.renewal else {
        panic!("{r:?}")
    };
    assert_eq!(expires_at - env.now(), 7 * DAY);
    assert_eq!(r.successes(), 3);

    let new = std::fs::read(&dest).unwrap();
    assert_ne!(sha(&new), sha(&old));
    assert_eq!(
        env.stack.broker.broker_token_expiry(&token_in(&new)),
        Some(expires_at)
    );
    for url in [CS1, CS2] {
        let held = env.stores[url]
            .inner
            .credential("dunepro", "dune", "production")
            .unwrap();
        assert_eq!(
            sha(format!("{}\n", held.broker_token.expose()).as_bytes()),
            sha(&new)
        );
    }
}

#[tokio::test]
async fn young_token_is_left_alone_and_redelivered_identically() {
    let env = env();
    let mgr = onboarded(&env, &[dunepro(), novapro()]).await;
    let before = env.node_contents(&[dunepro(), novapro()]);
    env.stack.clock.advance(6 * HOUR);
    let first = mgr.run_cycle().await.unwrap();
    env.stack.clock.advance(6 * HOUR);
    let second = mgr.run_cycle().await.unwrap();
    for r in first.robots.iter().chain(&second.robots) {
        assert_eq!(r.renewal, Renewal::NotDue);
        assert!(r.all_ok());
    }
    let after = env.node_contents(&[dunepro(), novapro()]);
    let hashes = |m: &BTreeMap<String, Vec<u8>>| m.values().map(|v| sha(v)).collect::<Vec<_>>();
    assert_eq!(hashes(&before), hashes(&after));
    // every configured destination exactly once per cycle
    for r in &second.robots {
        let labels: Vec<&str> = r
            .destinations
            .iter()
            .map(|d| d.destination.as_str())
            .collect();
        let unique: BTreeSet<&str> = labels.iter().copied().collect();
        assert_eq!(labels.len(), unique.len());
    }
    assert_eq!(
        second
            .robots
            .iter()
            .map(|r| r.destinations.len())
            .sum::<usize>(),
        6
    );
}

#[tokio::test]
async fn one_credstore_down_fails_only_itself() {
    let env = env();
    let mgr = onboarded(&env, &[dunepro()]).await;
    env.set_store_down(CS2, true);
    env.stack.clock.advance(DAY);
    let report = mgr.run_cycle().await.unwrap();
    let r = &report.robots[0];
    assert!(matches!(r.renewal, Renewal::Renewed { .. }));
    let down = r.destination(&format!("credstore:{CS2}")).unwrap();
    assert!(!down.ok);
    assert_eq!(down.retriable, Some(true));
    assert_eq!(r.successes(), 2);
    let line = r.log_lines().into_iter().find(|l| l.contains(CS2)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["outcome"], "failed");
    assert_eq!(v["retriable"], true);
    assert_eq!(v["renewal"]["status"], "renewed");

    env.set_store_down(CS2, false);
    assert!(mgr.run_cycle().await.unwrap().all_ok());
}

/// (robot, destination, ok) for every outcome, over a fixed schedule.
async fn schedule(failing: &BTreeSet<usize>) -> Vec<(String, String, bool, String)> {
    let env = env();
    let mgr = onboarded(&env, &[dunepro(), novapro()]).await;
    let targets: Vec<&str> = vec![CS1, CS2, "node1", "node2", "node3"];
    for i in failing {
        match targets[*i] {
            url if url.starts_with("https://") => env.set_store_down(url, true),
            node => {
                env.transport
                    .failing
                    .lock()
                    .unwrap()
                    .insert(node.to_string());
            }
        }
    }
    let mut out = Vec::new();
    for _ in 0..6 {
        env.stack.clock.advance(9 * HOUR);
        let report = mgr.run_cycle().await.unwrap();
        for r in report.robots {
            let renewal = serde_json::to_value(&r.renewal).unwrap()["status"].to_string();
            for d in r.destinations {
                out.push((r.robot.clone(), d.destination, d.ok, renewal.clone()));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn injected_failures_touch_only_their_destinations(failing in prop::collection::btree_set(0usize..5, 0..5)) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let clean = rt.block_on(schedule(&BTreeSet::new()));
        let faulty = rt.block_on(schedule(&failing));
        prop_assert_eq!(clean.len(), faulty.len());
        let names = [CS1, CS2, "node1", "node2", "node3"];
        let hit = |dest: &str| failing.iter().any(|i| dest.contains(names[*i]));
        for (c, f) in clean.iter().zip(&faulty) {
            prop_assert_eq!(&c.0, &f.0);
            prop_assert_eq!(&c.1, &f.1);
            prop_assert_eq!(&c.3, &f.3);
            if hit(&c.1) {
                prop_assert!(!f.2);
            } else {
                prop_assert_eq!(c.2, f.2, "{:?}", c);
            }
        }
    }
}

#[tokio::test]
async fn local_transport_places_exact_bytes_atomically() {
    let root = tempfile::tempdir().unwrap();
    std::fs::create_dir(root.path().join("n1")).unwrap();
    let t = LocalDirTransport::new(root.path());
    let path = std::path::Path::new("/home/robot/.vt/token");
    t.push("n1", path, b"first\n").await.unwrap();
    let file = root.path().join("n1/home/robot/.vt/token");
    assert_eq!(std::fs::read(&file).unwrap(), b"first\n");
    assert_eq!(mode_of(&file).unwrap(), 0o600);
    t.push("n1", path, b"second\n").await.unwrap();
    assert_eq!(sha(&std::fs::read(&file).unwrap()), sha(b"second\n"));

    let err = t.push("n9", path, b"x").await.unwrap_err();
    assert!(matches!(err, PushError::Unreachable { .. }) && err.retriable());
    let err = t
        .push("n1", std::path::Path::new("/a/../../etc/x"), b"x")
        .await
        .unwrap_err();
    assert!(matches!(err, PushError::InvalidPath { .. }) && !err.retriable());

    let broken = LocalDirTransport::new(root.path())
        .with_before_rename(|_, _| Err(std::io::Error::other("link dropped")));
    assert!(broken.push("n1", path, b"third\n").await.is_err());
    assert_eq!(std::fs::read(&file).unwrap(), b"second\n");
    let leftovers = std::fs::read_dir(file.parent().unwrap()).unwrap().count();
    assert_eq!(leftovers, 1);
}

#[tokio::test]
async fn dead_refresh_token_escalates_to_the_operator() {
    let env = env();
    let mgr = onboarded(&env, &[dunepro()]).await;
    env.stack.clock.advance(29 * DAY);
    let report = mgr.run_cycle().await.unwrap();
    let r = &report.robots[0];
    assert!(
        matches!(r.renewal, Renewal::OperatorActionRequired { .. }),
        "{r:?}"
    );
    assert!(r
        .destinations
        .iter()
        .all(|d| !d.ok && d.retriable == Some(false)));

    drop(mgr);
    let reopened = env.manager();
    let status = reopened.status().await.unwrap();
    assert!(status[0].operator_action_required.is_some());
    let again = reopened.run_cycle().await.unwrap();
    assert!(matches!(
        again.robots[0].renewal,
        Renewal::OperatorActionRequired { .. }
    ));
}
