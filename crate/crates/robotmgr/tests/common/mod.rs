#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use gridtoken_broker::LocalBroker;
use gridtoken_client::Interaction;
use gridtoken_core::secret::SecretString;
use gridtoken_core::SharedClock;
use gridtoken_credstore::{
    Attached, CredStore, CredStoreApi, CredStoreError, CredStoreSettings, JobRegistration,
    StoreAck, StoreRequest,
};
use gridtoken_robotmgr::{
    Destination, LocalDirTransport, ManagerSettings, PushError, PushTransport, RobotConfig,
    RobotManager, StoreResolver,
};
use gridtoken_testbed::stack::{admin_credential, Stack};
use sha2::{Digest, Sha256};

pub const CS1: &str = "https://schedd01.test/credstore";
pub const CS2: &str = "https://schedd02.test/credstore";

/// Consents in the operator's name as soon as a URL is shown.
pub struct Operator {
    pub stack: Arc<Stack>,
    pub principal: String,
    pub approve: bool,
}

#[async_trait]
impl Interaction for Operator {
    fn show_url(&self, url: &str) {
        if self.approve {
            self.stack.consent(url, &self.principal, true);
        }
    }

    async fn pause(&self, secs: u64) {
        self.stack.clock.advance(secs as i64);
    }
}

/// Credstore that can be switched off.
pub struct Switchable {
    pub inner: Arc<CredStore>,
    pub down: std::sync::atomic::AtomicBool,
}

#[async_trait]
impl CredStoreApi for Switchable {
    async fn store(&self, req: StoreRequest) -> Result<StoreAck, CredStoreError> {
        if self.down.load(std::sync::atomic::Ordering::SeqCst) {
            return Err(CredStoreError::Unreachable("connection refused".into()));
        }
        self.inner.store(req).await
    }

    async fn attach(&self, reg: JobRegistration) -> Result<Attached, CredStoreError> {
        self.inner.attach(reg).await
    }
}

/// Local-directory transport with per-destination failure injection.
pub struct Faulty {
    pub inner: LocalDirTransport,
    pub failing: Mutex<HashSet<String>>,
}

#[async_trait]
impl PushTransport for Faulty {
    async fn push(&self, node: &str, path: &Path, bytes: &[u8]) -> Result<(), PushError> {
        if self.failing.lock().unwrap().contains(node) {
            return Err(PushError::Unreachable {
                node: node.into(),
                reason: "injected".into(),
            });
        }
        self.inner.push(node, path, bytes).await
    }
}

pub struct Env {
    pub stack: Arc<Stack>,
    pub root: tempfile::TempDir,
    pub stores: BTreeMap<String, Arc<Switchable>>,
    pub transport: Arc<Faulty>,
}

pub fn env() -> Env {
    let stack = Arc::new(Stack::new());
    let root = tempfile::tempdir().unwrap();
    let clock: SharedClock = Arc::new(stack.clock.clone());
    let mut stores = BTreeMap::new();
    for url in [CS1, CS2] {
        let cs = CredStore::new(
            Arc::new(LocalBroker(stack.broker.clone())),
            clock.clone(),
            CredStoreSettings::default(),
        )
        .unwrap();
        stores.insert(
            url.to_string(),
            Arc::new(Switchable {
                inner: Arc::new(cs),
                down: false.into(),
            }),
        );
    }
    for node in ["node1", "node2", "node3"] {
        std::fs::create_dir_all(root.path().join("nodes").join(node)).unwrap();
    }
    let transport = Arc::new(Faulty {
        inner: LocalDirTransport::new(root.path().join("nodes")),
        failing: Mutex::new(HashSet::new()),
    });
    Env {
        stack,
        root,
        stores,
        transport,
    }
}

pub fn dunepro() -> RobotConfig {
    RobotConfig {
        principal: "dunepro".into(),
        experiment: "dune".into(),
        role: "production".into(),
        credstores: vec![CS1.into(), CS2.into()],
        destinations: vec![Destination {
            node: "node1".into(),
            path: "/home/dunepro/.vt/vt_dunepro".into(),
        }],
    }
}

pub fn novapro() -> RobotConfig {
    RobotConfig {
        principal: "novapro".into(),
        experiment: "nova".into(),
        role: "production".into(),
        credstores: vec![CS1.into()],
        destinations: vec![
            Destination {
                node: "node2".into(),
                path: "/srv/tokens/novapro".into(),
            },
            Destination {
                node: "node3".into(),
                path: "/srv/tokens/novapro".into(),
            },
        ],
    }
}

pub fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Env {
    pub fn state_dir(&self) -> PathBuf {
        self.root.path().join("state")
    }

    pub fn resolver(&self) -> StoreResolver {
        let stores = self.stores.clone();
        Arc::new(move |url: &str| stores[url].clone() as Arc<dyn CredStoreApi>)
    }

    pub fn manager(&self) -> RobotManager {
        self.manager_with(ManagerSettings::default())
    }

    pub fn manager_with(&self, settings: ManagerSettings) -> RobotManager {
        RobotManager::open(
            self.state_dir(),
            Arc::new(LocalBroker(self.stack.broker.clone())),
            Arc::new(self.stack.clock.clone()),
            self.transport.clone(),
            self.resolver(),
            settings,
        )
        .unwrap()
    }

    pub fn operator(&self, principal: &str, approve: bool) -> Operator {
        Operator {
            stack: self.stack.clone(),
            principal: principal.into(),
            approve,
        }
    }

    pub fn admin(&self) -> SecretString {
        admin_credential()
    }

    pub fn now(&self) -> i64 {
        self.stack.clock.advance(0)
    }

    pub fn node_file(&self, d: &Destination) -> PathBuf {
        self.transport.inner.resolve(&d.node, &d.path)
    }

    /// Every node destination's current bytes, keyed by label.
    pub fn node_contents(&self, configs: &[RobotConfig]) -> BTreeMap<String, Vec<u8>> {
        configs
            .iter()
            .flat_map(|c| c.destinations.iter())
            .map(|d| {
                (
                    d.label(),
                    std::fs::read(self.node_file(d)).unwrap_or_default(),
                )
            })
            .collect()
    }

    pub fn set_store_down(&self, url: &str, down: bool) {
        self.stores[url]
            .down
            .store(down, std::sync::atomic::Ordering::SeqCst);
    }
}
