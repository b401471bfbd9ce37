mod common;

use std::collections::BTreeMap;

use common::*;
use gridtoken_core::SecretString;
use gridtoken_robotmgr::{Renewal, RobotManager};
use gridtoken_testbed::stack::{DAY, HOUR};

fn remaining(env: &Env, bytes: &[u8]) -> i64 {
    let token = SecretString::new(String::from_utf8(bytes.to_vec()).unwrap().trim());
    env.stack
        .broker
        .broker_token_expiry(&token)
        .expect("destination holds a broker-issued token")
        - env.now()
}

#[tokio::test]
async fn thirty_days_at_six_hour_cycles_with_a_restart() {
    let env = env();
    let robots = [dunepro(), novapro()];
    let mut mgr: RobotManager = env.manager();
    for c in &robots {
        mgr.onboard(&env.operator(&c.principal, true), &env.admin(), c.clone())
            .await
            .unwrap();
    }
    let sessions = env.stack.broker.bootstrap_sessions_created();
    let mut renewals = 0;
    let mut min_left = i64::MAX;
    let cycles = 30 * 4;
    for i in 1..=cycles {
        env.stack.clock.advance(6 * HOUR);
        for (label, bytes) in env.node_contents(&robots) {
            let left = remaining(&env, &bytes);
            min_left = min_left.min(left);
            assert!(left >= 6 * DAY, "{label} at cycle {i}: {left}s left");
        }
        if i == cycles / 2 {
            let before = env.node_contents(&robots);
            drop(mgr);
            mgr = env.manager();
            assert_eq!(env.node_contents(&robots), before);
        }
        let before = env.node_contents(&robots);
        let report = mgr.run_cycle().await.unwrap();
        assert!(report.all_ok(), "cycle {i}: {report:?}");
        let after = env.node_contents(&robots);
        for r in &report.robots {
            let cfg = robots.iter().find(|c| c.id() == r.robot).unwrap();
            let changed = cfg
                .destinations
                .iter()
                .any(|d| before[&d.label()] != after[&d.label()]);
            match r.renewal {
                Renewal::Renewed { .. } => {
                    renewals += 1;
                    assert!(changed);
                }
                Renewal::NotDue => {
                    assert!(!changed, "{} changed without renewal at cycle {i}", r.robot)
                }
                ref other => panic!("{other:?}"),
            }
        }
        for url in [CS1, CS2] {
            let held = env.stores[url]
                .inner
                .credential("dunepro", "dune", "production")
                .unwrap();
            assert!(remaining(&env, held.broker_token.expose().as_bytes()) >= 6 * DAY);
        }
    }
    assert_eq!(env.stack.broker.bootstrap_sessions_created(), sessions);
    // at least one renewal per robot per day, never more than one per cycle
    assert!(
        (2 * 30..=2 * 30 * 4 / 3 + 2).contains(&renewals),
        "{renewals}"
    );
    assert_eq!(min_left, 6 * DAY);

    let status: BTreeMap<String, _> = mgr
        .status()
        .await
        .unwrap()
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    assert_eq!(status.len(), 2);
    for r in status.values() {
        assert!(r.last_success.values().all(|t| *t == env.now()));
    }
}
