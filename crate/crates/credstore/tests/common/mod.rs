#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use gridtoken_broker::{
    AccessToken, AuthSession, BeginRequest, BrokerApi, BrokerError, BrokerTokenGrant, ChangeReport,
    ErrorCode, ExchangeOptions, Health, LocalBroker, PollResponse, RenewRequest, RobotRequest,
    RobotResponse,
};
use gridtoken_core::secret::SecretString;
use gridtoken_core::SharedClock;
use gridtoken_credstore::{CredStore, CredStoreSettings, JobRegistration, StoreRequest};
use gridtoken_testbed::stack::Stack;

/// A broker that can be taken down, or made to refuse particular tokens.
pub struct FlakyBroker {
    inner: LocalBroker,
    pub down: AtomicBool,
    pub refuse: Mutex<HashSet<String>>,
}

impl FlakyBroker {
    fn gate(&self, token: Option<&SecretString>) -> Result<(), BrokerError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(BrokerError::new(
                ErrorCode::BrokerUnreachable,
                "connection refused",
            ));
        }
        if let Some(t) = token {
            if self.refuse.lock().unwrap().contains(t.expose()) {
                return Err(BrokerError::new(
                    ErrorCode::UpstreamError,
                    "injected failure",
                ));
            }
        }
        Ok(())
    }
}

#[async_trait]
impl BrokerApi for FlakyBroker {
    async fn begin(&self, req: BeginRequest) -> Result<AuthSession, BrokerError> {
        self.gate(None)?;
        self.inner.begin(req).await
    }
    async fn poll(&self, handle: &SecretString) -> Result<PollResponse, BrokerError> {
        self.gate(None)?;
        self.inner.poll(handle).await
    }
    async fn renew(&self, req: RenewRequest) -> Result<BrokerTokenGrant, BrokerError> {
        self.gate(None)?;
        self.inner.renew(req).await
    }
    async fn exchange(
        &self,
        token: &SecretString,
        opts: ExchangeOptions,
    ) -> Result<AccessToken, BrokerError> {
        self.gate(Some(token))?;
        self.inner.exchange(token, opts).await
    }
    async fn store_for_robot(
        &self,
        admin: &SecretString,
        req: RobotRequest,
    ) -> Result<RobotResponse, BrokerError> {
        self.gate(None)?;
        self.inner.store_for_robot(admin, req).await
    }
    async fn apply_config(
        &self,
        admin: &SecretString,
        document: &str,
    ) -> Result<ChangeReport, BrokerError> {
        self.gate(None)?;
        self.inner.apply_config(admin, document).await
    }
    async fn health(&self) -> Result<Health, BrokerError> {
        self.gate(None)?;
        self.inner.health().await
    }
}

pub struct Env {
    pub stack: Stack,
    pub broker: Arc<FlakyBroker>,
    pub store: Arc<CredStore>,
    pub scratch: tempfile::TempDir,
}

pub fn env() -> Env {
    env_with(CredStoreSettings::default())
}

pub fn env_with(settings: CredStoreSettings) -> Env {
    let stack = Stack::new();
    let broker = Arc::new(FlakyBroker {
        inner: LocalBroker(stack.broker.clone()),
        down: AtomicBool::new(false),
        refuse: Mutex::new(HashSet::new()),
    });
    let clock: SharedClock = Arc::new(stack.clock.clone());
    let store = Arc::new(CredStore::new(broker.clone(), clock, settings).unwrap());
    Env {
        stack,
        broker,
        store,
        scratch: tempfile::tempdir().unwrap(),
    }
}

impl Env {
    pub fn now(&self) -> i64 {
        self.stack.clock.advance(0)
    }

    pub fn set_down(&self, down: bool) {
        self.broker.down.store(down, Ordering::SeqCst);
    }

    pub fn sandbox(&self, job: &str) -> PathBuf {
        let p = self.scratch.path().join(job);
        std::fs::create_dir_all(&p).unwrap();
        p
    }

    pub async fn store_for(&self, owner: &str, experiment: &str, role: &str) -> SecretString {
        let bt = self.stack.bootstrap_token(owner, experiment, role).await;
        self.store
            .store_credential(&StoreRequest {
                owner: owner.into(),
                experiment: experiment.into(),
                role: role.into(),
                broker_token: bt.token.clone(),
            })
            .await
            .unwrap();
        bt.token
    }

    pub fn job(&self, id: &str, owner: &str, experiment: &str, role: &str) -> JobRegistration {
        JobRegistration::new(id, owner, experiment, role, self.sandbox(id))
    }

    /// Seconds left on the token currently in `job`'s sandbox.
    pub fn remaining(&self, job: &str) -> i64 {
        let text = std::fs::read_to_string(self.scratch.path().join(job).join("bt_token")).unwrap();
        gridtoken_core::peek_claims(text.trim()).unwrap().exp - self.now()
    }
}
