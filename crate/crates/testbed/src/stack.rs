//! A complete registry → issuer → broker deployment on one manual clock.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use gridtoken_broker::config::{AdminConfig, IssuerClient};
use gridtoken_broker::{
    BeginRequest, Broker, BrokerConfig, BrokerError, BrokerSettings, BrokerTokenGrant,
    ExperimentConfig, MasterKey, PollResponse,
};
use gridtoken_core::secret::SecretString;
use gridtoken_core::{Lifetimes, ManualClock};
use gridtoken_issuer::{AuthorizeRequest, IssuerService, LocalTokenEndpoint};
use gridtoken_registry::{export_directory, generate_configs, replay, Change, GeneratedConfig};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub const ISSUER_BASE: &str = "https://issuer.test";
pub const BROKER_URL: &str = "https://broker.test";
pub const T0: i64 = 1_700_000_000;
pub const HOUR: i64 = 3_600;
pub const DAY: i64 = 86_400;
pub const ADMIN_CREDENTIAL: &str = "testbed-admin-credential";

pub const DUNE_PRODUCTION: [&str; 3] = [
    "storage.read:/dune",
    "storage.create:/dune/scratch",
    "compute.create",
];

fn role(experiment: &str, role: &str, scopes: &[&str]) -> Change {
    Change::SetRoleScopes {
        experiment: experiment.into(),
        role: role.into(),
        scopes: scopes.iter().map(|s| s.to_string()).collect(),
    }
}

fn assign(user: &str, experiment: &str, role: &str) -> Change {
    Change::AssignRole {
        user: user.into(),
        experiment: experiment.into(),
        role: role.into(),
    }
}

/// dune has its own issuer; nova and sbnd share "fermilab".
/// alice is in everything, bob in nova, dunepro is dune's production robot.
pub fn default_changes() -> Vec<Change> {
    let mut out = vec![
        Change::AddExperiment {
            name: "dune".into(),
            dedicated_issuer: true,
            storage_prefix: None,
        },
        Change::AddExperiment {
            name: "nova".into(),
            dedicated_issuer: false,
            storage_prefix: None,
        },
        Change::AddExperiment {
            name: "sbnd".into(),
            dedicated_issuer: false,
            storage_prefix: None,
        },
        role("dune", "production", &DUNE_PRODUCTION),
        role("dune", "analysis", &["storage.read:/dune"]),
        role("nova", "analysis", &["storage.read:/nova", "compute.read"]),
        role(
            "nova",
            "production",
            &[
                "storage.read:/nova",
                "storage.create:/nova",
                "compute.create",
            ],
        ),
        role("sbnd", "analysis", &["storage.read:/sbnd"]),
    ];
    for u in ["alice", "bob", "dunepro", "novapro"] {
        out.push(Change::AddUser {
            id: u.into(),
            display_name: String::new(),
        });
    }
    out.extend([
        assign("alice", "dune", "production"),
        assign("alice", "dune", "analysis"),
        assign("alice", "nova", "analysis"),
        assign("alice", "sbnd", "analysis"),
        assign("bob", "nova", "analysis"),
        assign("dunepro", "dune", "production"),
        assign("novapro", "nova", "production"),
    ]);
    out
}

pub fn admin_credential() -> SecretString {
    SecretString::new(ADMIN_CREDENTIAL)
}

/// Broker config for every generated experiment except those in `skip`.
pub fn broker_config(
    gen: &GeneratedConfig,
    secrets: &HashMap<String, SecretString>,
    skip: &[&str],
) -> BrokerConfig {
    let mut cfg = BrokerConfig {
        admin: Some(AdminConfig {
            credential_sha256: hex::encode(Sha256::digest(ADMIN_CREDENTIAL.as_bytes())),
        }),
        ..BrokerConfig::default()
    };
    for (name, entry) in &gen.issuers {
        cfg.issuers.insert(
            name.clone(),
            IssuerClient {
                client_id: entry.client_id.clone(),
                client_secret: secrets[name].clone(),
            },
        );
    }
    for (name, b) in gen
        .broker
        .iter()
        .filter(|(n, _)| !skip.contains(&n.as_str()))
    {
        cfg.experiments.insert(
            name.clone(),
            ExperimentConfig {
                issuer: b.issuer.clone(),
                issuer_url: b.issuer_url.clone(),
                roles: b.roles.clone(),
                realm: b.realm.clone(),
                secondary_keys: Default::default(),
                rate_limit: None,
            },
        );
    }
    cfg
}

type Tweak = Box<dyn FnOnce(&mut BrokerConfig)>;

pub struct StackBuilder {
    changes: Vec<Change>,
    skip: Vec<String>,
    persistent: bool,
    auto_approve: bool,
    issuer_base: String,
    broker_url: String,
    start: i64,
    tweak: Option<Tweak>,
}

impl Default for StackBuilder {
    fn default() -> Self {
        StackBuilder {
            changes: default_changes(),
            skip: Vec::new(),
            persistent: false,
            auto_approve: false,
            issuer_base: ISSUER_BASE.into(),
            broker_url: BROKER_URL.into(),
            start: T0,
            tweak: None,
        }
    }
}

impl StackBuilder {
    pub fn changes(mut self, changes: Vec<Change>) -> Self {
        self.changes = changes;
        self
    }

    /// Leave these experiments out of the broker config.
    pub fn skip(mut self, experiments: &[&str]) -> Self {
        self.skip = experiments.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Keep the broker's secret store in a temp directory.
    pub fn persistent(mut self) -> Self {
        self.persistent = true;
        self
    }

    pub fn auto_approve(mut self) -> Self {
        self.auto_approve = true;
        self
    }

    pub fn urls(mut self, issuer_base: impl Into<String>, broker_url: impl Into<String>) -> Self {
        self.issuer_base = issuer_base.into();
        self.broker_url = broker_url.into();
        self
    }

    pub fn start(mut self, t: i64) -> Self {
        self.start = t;
        self
    }

    pub fn tweak(mut self, f: impl FnOnce(&mut BrokerConfig) + 'static) -> Self {
        self.tweak = Some(Box::new(f));
        self
    }

    pub fn build(self) -> Stack {
        let clock = ManualClock::new(self.start);
        let issuer = Arc::new(
            IssuerService::new(
                &self.issuer_base,
                Arc::new(clock.clone()),
                Lifetimes::default(),
            )
            .with_auto_approve(self.auto_approve),
        );
        let state = replay(&self.changes).expect("registry fixture replays");
        let gen = generate_configs(&state, &self.issuer_base);
        issuer.configure(&gen, &export_directory(&state));
        let mut secrets = HashMap::new();
        for (name, entry) in &gen.issuers {
            let secret = issuer
                .register_client(name, &entry.client_id)
                .expect("issuer exists");
            secrets.insert(name.clone(), secret);
        }
        let skip: Vec<&str> = self.skip.iter().map(String::as_str).collect();
        let mut cfg = broker_config(&gen, &secrets, &skip);
        if let Some(f) = self.tweak {
            f(&mut cfg);
        }
        let dir = tempfile::tempdir().expect("temp dir");
        let master = MasterKey::generate();
        let master_hex = master.to_hex();
        let mut settings = BrokerSettings::in_memory(&self.broker_url);
        settings.master_key = master;
        if self.persistent {
            settings.store_path = Some(dir.path().join("broker-secrets.sealed"));
        }
        let upstream = Arc::new(LocalTokenEndpoint::new(issuer.clone()));
        let broker = Arc::new(
            Broker::new(cfg, settings, upstream.clone(), Arc::new(clock.clone()))
                .expect("broker config is valid"),
        );
        Stack {
            clock,
            issuer,
            upstream,
            broker,
            gen,
            secrets,
            master_hex,
            dir,
        }
    }
}

pub struct Stack {
    pub clock: ManualClock,
    pub issuer: Arc<IssuerService>,
    pub upstream: Arc<LocalTokenEndpoint>,
    pub broker: Arc<Broker>,
    pub gen: GeneratedConfig,
    pub secrets: HashMap<String, SecretString>,
    pub master_hex: SecretString,
    dir: tempfile::TempDir,
}

pub fn query_param(url: &str, name: &str) -> Option<String> {
    url::Url::parse(url)
        .ok()?
        .query_pairs()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.into_owned())
}

impl Stack {
    pub fn builder() -> StackBuilder {
        StackBuilder::default()
    }

    pub fn new() -> Stack {
        StackBuilder::default().build()
    }

    /// Scratch directory that lives as long as the stack.
    pub fn dir(&self) -> PathBuf {
        self.dir.path().to_path_buf()
    }

    pub fn store_path(&self) -> Option<PathBuf> {
        self.broker.store_path()
    }

    pub fn config_yaml(&self, skip: &[&str]) -> String {
        broker_config(&self.gen, &self.secrets, skip).to_yaml()
    }

    /// Play the user's browser: decide at the issuer and deliver the
    /// redirect to the broker callback.
    pub fn consent(&self, url: &str, principal: &str, approve: bool) {
        let q = |n: &str| query_param(url, n).unwrap_or_default();
        let experiment = q("experiment");
        let issuer = self
            .broker
            .config()
            .experiments
            .get(&experiment)
            .map(|e| e.issuer.clone())
            .unwrap_or_default();
        let res = self.issuer.authorize(&AuthorizeRequest {
            issuer,
            client_id: q("client_id"),
            redirect_uri: Some(q("redirect_uri")),
            experiment,
            role: q("role"),
            principal: principal.into(),
            approve,
        });
        let _ = match res {
            Ok(code) => self.broker.callback(&q("state"), Some(&code), None),
            Err(e) => self
                .broker
                .callback(&q("state"), None, Some(e.oauth_code())),
        };
    }

    pub async fn bootstrap(
        &self,
        principal: &str,
        experiment: &str,
        role: &str,
    ) -> Result<PollResponse, BrokerError> {
        let session = self.broker.begin(&BeginRequest {
            principal: principal.into(),
            experiment: experiment.into(),
            role: role.into(),
        })?;
        self.consent(&session.url, principal, true);
        self.broker.poll(&session.poll_handle).await
    }

    pub async fn bootstrap_token(
        &self,
        principal: &str,
        experiment: &str,
        role: &str,
    ) -> BrokerTokenGrant {
        match self.bootstrap(principal, experiment, role).await {
            Ok(PollResponse::Complete { broker_token, .. }) => broker_token,
            other => panic!("bootstrap of {principal}/{experiment}/{role} failed: {other:?}"),
        }
    }

    pub fn client_id(&self, experiment: &str) -> String {
        let issuer = &self.broker.config().experiments[experiment].issuer;
        self.gen.issuers[issuer].client_id.clone()
    }

    /// Every refresh handle the issuer has ever minted.
    pub fn refresh_handles(&self) -> Vec<String> {
        self.issuer.issued_refresh_handles()
    }

    /// Serve the issuer and broker over HTTP on loopback. The stack must have
    /// been built with `urls` matching the listeners; see [`serve_stack`].
    pub fn spawn_servers(&self, issuer: TcpListener, broker: TcpListener) -> Servers {
        let i = tokio::spawn(serve(
            issuer,
            gridtoken_issuer::http::router(self.issuer.clone()),
        ));
        let b = tokio::spawn(serve(
            broker,
            gridtoken_broker::http::router(self.broker.clone()),
        ));
        Servers { tasks: vec![i, b] }
    }
}

impl Default for Stack {
    fn default() -> Self {
        Stack::new()
    }
}

async fn serve(listener: TcpListener, app: axum::Router) {
    let _ = axum::serve(listener, app).await;
}

pub struct Servers {
    tasks: Vec<JoinHandle<()>>,
}

impl Servers {
    pub fn stop(&self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl Drop for Servers {
    fn drop(&mut self) {
        self.stop();
    }
}

pub struct ServedStack {
    pub stack: Stack,
    pub issuer_base: String,
    pub broker_url: String,
    pub servers: Servers,
}

pub async fn loopback() -> (TcpListener, SocketAddr) {
    let l = TcpListener::bind("127.0.0.1:0")
        .await
        .expect("bind loopback");
    let addr = l.local_addr().expect("local addr");
    (l, addr)
}

/// Build a stack from `builder` and serve it on two loopback ports.
pub async fn serve_stack(builder: StackBuilder) -> ServedStack {
    let (il, ia) = loopback().await;
    let (bl, ba) = loopback().await;
    let issuer_base = format!("http://{ia}");
    let broker_url = format!("http://{ba}");
    let stack = builder.urls(&issuer_base, &broker_url).build();
    let servers = stack.spawn_servers(il, bl);
    ServedStack {
        stack,
        issuer_base,
        broker_url,
        servers,
    }
}
