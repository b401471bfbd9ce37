mod common;

use common::*;
use gridtoken_broker::ErrorCode;
use gridtoken_core::fsutil::mode_of;
use gridtoken_core::{verify, VerifyPolicy};
use gridtoken_credstore::{CredStoreError, CredStoreSettings, StoreRequest, SANDBOX_TOKEN};
use gridtoken_testbed::stack::DAY;

fn request(owner: &str, token: &gridtoken_core::SecretString) -> StoreRequest {
    StoreRequest {
        owner: owner.into(),
        experiment: "dune".into(),
        role: "production".into(),
        broker_token: token.clone(),
    }
}

#[tokio::test]
async fn restore_replaces_the_credential() {
    let env = env();
    let first = env
        .stack
        .bootstrap_token("alice", "dune", "production")
        .await;
    let ack = env
        .store
        .store_credential(&request("alice", &first.token))
        .await
        .unwrap();
    assert!(!ack.replaced);

    let second = env
        .stack
        .bootstrap_token("alice", "dune", "production")
        .await;
    let ack = env
        .store
        .store_credential(&request("alice", &second.token))
        .await
        .unwrap();
    assert!(ack.replaced);
    let held = env.store.credential("alice", "dune", "production").unwrap();
    assert_eq!(held.broker_token, second.token);
    assert_ne!(held.broker_token, first.token);
    assert_eq!(held.stored_at, env.now());
}

#[tokio::test]
async fn store_validates_the_token() {
    let env = env();
    let bt = env
        .stack
        .bootstrap_token("alice", "dune", "production")
        .await;

    let err = env
        .store
        .store_credential(&request("bob", &bt.token))
        .await
        .unwrap_err();
    assert!(
        matches!(err, CredStoreError::InvalidBrokerToken(_)),
        "{err:?}"
    );
    let mut wrong_role = request("alice", &bt.token);
    wrong_role.role = "analysis".into();
    assert!(matches!(
        env.store.store_credential(&wrong_role).await,
        Err(CredStoreError::InvalidBrokerToken(_))
    ));

    env.set_down(true);
    let err = env
        .store
        .store_credential(&request("alice", &bt.token))
        .await
        .unwrap_err();
    assert!(matches!(err, CredStoreError::Unavailable(_)), "{err:?}");
    assert!(err.retriable());
    env.set_down(false);

    env.stack.clock.advance(8 * DAY);
    let err = env
        .store
        .store_credential(&request("alice", &bt.token))
        .await
        .unwrap_err();
    assert!(
        matches!(err, CredStoreError::InvalidBrokerToken(_)),
        "{err:?}"
    );
    assert!(env
        .store
        .credential("alice", "dune", "production")
        .is_none());
}

#[tokio::test]
async fn attached_sandbox_token_verifies_offline() {
    let env = env();
    env.store_for("alice", "dune", "production").await;
    let issuer = env.stack.broker.config().experiments["dune"].issuer.clone();
    let jwks = env.stack.issuer.jwks(&issuer).unwrap();

    let attached = env
        .store
        .attach_job(env.job("job-1", "alice", "dune", "production"))
        .await
        .unwrap();
    assert_eq!(
        attached.path,
        env.scratch.path().join("job-1").join(SANDBOX_TOKEN)
    );
    assert_eq!(mode_of(&attached.path).unwrap(), 0o600);
    let text = std::fs::read_to_string(&attached.path).unwrap();
    assert!(text.ends_with('\n'));

    env.stack.upstream.set_online(false);
    let claims = verify(
        text.trim(),
        &jwks,
        &VerifyPolicy::permissive(env.stack.issuer.issuer_url(&issuer)),
        env.now(),
    )
    .unwrap();
    assert_eq!(claims.sub, "alice");
    assert_eq!(claims.exp, attached.expires_at);
    assert_eq!(claims.exp - env.now(), 10_800);
}

#[tokio::test]
async fn attach_errors() {
    let env = env();
    let err = env
        .store
        .attach_job(env.job("job-1", "alice", "dune", "production"))
        .await
        .unwrap_err();
    assert!(
        matches!(err, CredStoreError::NoCredential { .. }),
        "{err:?}"
    );

    env.store_for("alice", "dune", "production").await;
    let mut wide = env.job("job-2", "alice", "dune", "production");
    wide.scopes = Some(vec!["storage.create:/dune".into()]);
    match env.store.attach_job(wide).await.unwrap_err() {
        CredStoreError::Exchange(e) => assert_eq!(e.code, ErrorCode::DownscopeRefused),
        other => panic!("{other:?}"),
    }
    assert!(!env
        .scratch
        .path()
        .join("job-2")
        .join(SANDBOX_TOKEN)
        .exists());
    assert!(env.store.job_ids().is_empty());

    let mut narrow = env.job("job-3", "alice", "dune", "production");
    narrow.scopes = Some(vec!["storage.read:/dune/raw".into()]);
    let at = env.store.attach_job(narrow.clone()).await.unwrap();
    let claims =
        gridtoken_core::peek_claims(std::fs::read_to_string(at.path).unwrap().trim()).unwrap();
    assert_eq!(
        claims
            .scope
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>(),
        vec!["storage.read:/dune/raw"]
    );
    assert!(matches!(
        env.store.attach_job(narrow).await,
        Err(CredStoreError::DuplicateJob(_))
    ));

    let mut missing = env.job("job-4", "alice", "dune", "production");
    missing.sandbox = env.scratch.path().join("nope");
    assert!(matches!(
        env.store.attach_job(missing).await,
        Err(CredStoreError::InvalidRegistration(_))
    ));
    let mut long_lead = env.job("job-5", "alice", "dune", "production");
    long_lead.lead_time = Some(10_800);
    assert!(matches!(
        env.store.attach_job(long_lead).await,
        Err(CredStoreError::InvalidRegistration(_))
    ));
}

#[test]
fn settings_are_validated() {
    assert!(CredStoreSettings::default().validate().is_ok());
    let bad = CredStoreSettings {
        lead_time: 300,
        cycle_period: 300,
        ..CredStoreSettings::default()
    };
    assert!(bad.validate().is_err());
    let bad = CredStoreSettings {
        lead_time: 10_800,
        ..CredStoreSettings::default()
    };
    assert!(bad.validate().is_err());
}
