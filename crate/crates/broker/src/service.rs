//! The broker proper.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use gridtoken_core::oauth::{error_code, grant, TokenEndpoint, TokenRequest, UpstreamError};
use gridtoken_core::scope::parse_scope;
use gridtoken_core::secret::{random_handle, random_hex, SecretString};
use gridtoken_core::{peek_claims, SharedClock};
use sha2::{Digest, Sha256};
use url::Url;

use crate::api::{
    AccessToken, AuthSession, BeginRequest, BrokerError, BrokerTokenGrant, ErrorCode,
    ExchangeOptions, PollResponse, RenewRequest, RobotRequest, RobotResponse,
};
use crate::config::{diff, BrokerConfig, ChangeReport, ExperimentConfig};
use crate::ratelimit::SlidingWindow;
use crate::secondary::{check_assertion, AssertionError, ASSERTION_WINDOW};
use crate::store::{
    enrollment_key, token_hash, BrokerSecretRecord, MasterKey, RecordKey, SealedFile,
    StoreContents, TokenMeta,
};

pub const MAX_SESSIONS_PER_PRINCIPAL: usize = 5;
pub const CALLBACK_PATH: &str = "/v1/auth/oidc/callback";

/// Startup parameters that are not part of the reloadable config.
pub struct BrokerSettings {
    /// Externally visible base URL, used to build the OIDC callback.
    pub public_url: String,
    pub store_path: Option<PathBuf>,
    pub master_key: MasterKey,
    /// How long expired broker-token hashes are kept so that an expired token
    /// can be told apart from an unknown one.
    pub token_retention: i64,
}

impl BrokerSettings {
    pub fn in_memory(public_url: impl Into<String>) -> Self {
        BrokerSettings {
            public_url: public_url.into(),
            store_path: None,
            master_key: MasterKey::generate(),
            token_retention: 60 * 86_400,
        }
    }
}

#[derive(Debug, Clone)]
enum SessionState {
    Pending,
    Approved(String),
    Denied(String),
}

#[derive(Debug, Clone)]
struct Session {
    principal: String,
    experiment: String,
    role: String,
    state: String,
    redirect_uri: String,
    expires_at: i64,
    status: SessionState,
}

#[derive(Default)]
struct Inner {
    records: BTreeMap<RecordKey, BrokerSecretRecord>,
    tokens: BTreeMap<String, TokenMeta>,
    enrollments: BTreeMap<String, String>,
    /// sha256(poll handle) -> session
    sessions: HashMap<String, Session>,
    /// oauth state -> sha256(poll handle)
    by_state: HashMap<String, String>,
    limiter: SlidingWindow<(String, String)>,
    /// signature -> time after which it can be forgotten
    seen_assertions: HashMap<String, i64>,
}

impl Inner {
    fn contents(&self) -> StoreContents {
        StoreContents {
            records: self.records.values().cloned().collect(),
            tokens: self.tokens.clone(),
            enrollments: self.enrollments.clone(),
        }
    }
}

pub struct Broker {
    config: RwLock<Arc<BrokerConfig>>,
    reconfig: Mutex<()>,
    public_url: RwLock<String>,
    store: Option<SealedFile>,
    retention: i64,
    upstream: Arc<dyn TokenEndpoint>,
    clock: SharedClock,
    inner: Mutex<Inner>,
    record_locks: Mutex<HashMap<RecordKey, Arc<tokio::sync::RwLock<()>>>>,
    requests: AtomicU64,
    sessions_created: AtomicU64,
}

fn err(code: ErrorCode, msg: impl Into<String>) -> BrokerError {
    BrokerError::new(code, msg)
}

fn upstream_error(e: UpstreamError) -> BrokerError {
    match e {
        UpstreamError::Unreachable(m) => err(ErrorCode::IssuerUnreachable, m),
        UpstreamError::Rejected(body) => {
            let desc = body.error_description.unwrap_or_default();
            match body.error.as_str() {
                error_code::INVALID_GRANT => err(
                    ErrorCode::BootstrapRequired,
                    format!("issuer rejected refresh token: {desc}"),
                ),
                error_code::INVALID_SCOPE => err(ErrorCode::DownscopeRefused, desc),
                _ => err(ErrorCode::UpstreamError, format!("{}: {desc}", body.error)),
            }
        }
    }
}

fn hash(s: &str) -> String {
    token_hash(s)
}

impl Broker {
    pub fn new(
        config: BrokerConfig,
        settings: BrokerSettings,
        upstream: Arc<dyn TokenEndpoint>,
        clock: SharedClock,
    ) -> Result<Self, BrokerError> {
        config
            .validate()
            .map_err(|e| err(ErrorCode::InvalidConfig, e.to_string()))?;
        let store = settings
            .store_path
            .as_ref()
            .map(|p| SealedFile::new(p.clone(), &settings.master_key));
        let mut inner = Inner::default();
        if let Some(s) = &store {
            let contents = s
                .load()
                .map_err(|e| err(ErrorCode::StoreFailure, e.to_string()))?;
            inner.records = contents
                .records
                .into_iter()
                .map(|r| (r.key.clone(), r))
                .collect();
            inner.tokens = contents.tokens;
            inner.enrollments = contents.enrollments;
        }
        Ok(Broker {
            config: RwLock::new(Arc::new(config)),
            reconfig: Mutex::new(()),
            public_url: RwLock::new(settings.public_url.trim_end_matches('/').to_string()),
            store,
            retention: settings.token_retention,
            upstream,
            clock,
            inner: Mutex::new(inner),
            record_locks: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
            sessions_created: AtomicU64::new(0),
        })
    }

    pub fn set_public_url(&self, url: &str) {
        *self.public_url.write().expect("url lock") = url.trim_end_matches('/').to_string();
    }

    pub fn config(&self) -> Arc<BrokerConfig> {
        self.config.read().expect("config lock").clone()
    }

    /// Total client-facing operations served.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn bootstrap_sessions_created(&self) -> u64 {
        self.sessions_created.load(Ordering::SeqCst)
    }

    pub fn record_keys(&self) -> Vec<RecordKey> {
        self.lock().records.keys().cloned().collect()
    }

    pub fn is_robot(&self, key: &RecordKey) -> bool {
        self.lock().records.get(key).is_some_and(|r| r.robot)
    }

    /// Expiry of a broker token this broker issued, expired or not.
    pub fn broker_token_expiry(&self, token: &SecretString) -> Option<i64> {
        self.lock()
            .tokens
            .get(&hash(token.expose()))
            .map(|m| m.expires_at)
    }

    pub fn store_path(&self) -> Option<PathBuf> {
        self.store.as_ref().map(|s| s.path().to_path_buf())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("broker state lock")
    }

    fn now(&self) -> i64 {
        self.clock.now()
    }

    fn tick(&self) {
        self.requests.fetch_add(1, Ordering::SeqCst);
    }

    fn persist(&self, inner: &Inner) -> Result<(), BrokerError> {
        match &self.store {
            Some(s) => s
                .save(&inner.contents())
                .map_err(|e| err(ErrorCode::StoreFailure, e.to_string())),
            None => Ok(()),
        }
    }

    fn record_lock(&self, key: &RecordKey) -> Arc<tokio::sync::RwLock<()>> {
        self.record_locks
            .lock()
            .expect("record lock table")
            .entry(key.clone())
            .or_default()
            .clone()
    }

    fn experiment<'a>(
        cfg: &'a BrokerConfig,
        experiment: &str,
        role: &str,
    ) -> Result<&'a ExperimentConfig, BrokerError> {
        let exp = cfg.experiments.get(experiment).ok_or_else(|| {
            err(
                ErrorCode::UnknownExperiment,
                format!("unknown experiment {experiment}"),
            )
        })?;
        if !exp.roles.iter().any(|r| r == role) {
            return Err(err(
                ErrorCode::UnknownRole,
                format!("experiment {experiment} has no role {role}"),
            ));
        }
        Ok(exp)
    }

    fn client_request(
        cfg: &BrokerConfig,
        exp: &ExperimentConfig,
        grant_type: &str,
    ) -> TokenRequest {
        let client = &cfg.issuers[&exp.issuer];
        TokenRequest {
            grant_type: grant_type.into(),
            client_id: client.client_id.clone(),
            client_secret: client.client_secret.clone(),
            ..Default::default()
        }
    }

    /// Mint a broker token bound to `key`. Caller persists.
    fn issue_token(
        &self,
        inner: &mut Inner,
        cfg: &BrokerConfig,
        key: &RecordKey,
        now: i64,
    ) -> BrokerTokenGrant {
        let retention = self.retention;
        inner.tokens.retain(|_, t| t.expires_at + retention > now);
        let token = format!("gtb_{}", random_handle());
        let meta = TokenMeta {
            key: key.clone(),
            issued_at: now,
            expires_at: now + cfg.lifetimes.broker_token,
        };
        inner.tokens.insert(hash(&token), meta.clone());
        BrokerTokenGrant {
            token: SecretString::new(token),
            principal: key.principal.clone(),
            experiment: key.experiment.clone(),
            role: key.role.clone(),
            issued_at: meta.issued_at,
            expires_at: meta.expires_at,
        }
    }

    pub fn begin(&self, req: &BeginRequest) -> Result<AuthSession, BrokerError> {
        self.tick();
        let cfg = self.config();
        let exp = Self::experiment(&cfg, &req.experiment, &req.role)?;
        let client = &cfg.issuers[&exp.issuer];
        let now = self.now();
        let mut inner = self.lock();
        inner.sessions.retain(|_, s| s.expires_at > now);
        let live = inner
            .sessions
            .values()
            .filter(|s| s.principal == req.principal)
            .count();
        if live >= MAX_SESSIONS_PER_PRINCIPAL {
            return Err(err(
                ErrorCode::TooManySessions,
                format!("{} already has {live} pending sessions", req.principal),
            ));
        }
        let handle = random_handle();
        let state = random_hex(16);
        let redirect_uri = format!(
            "{}{CALLBACK_PATH}",
            self.public_url.read().expect("url lock")
        );
        let mut url = Url::parse(&format!(
            "{}/authorize",
            exp.issuer_url.trim_end_matches('/')
        ))
        .map_err(|e| err(ErrorCode::InvalidConfig, format!("issuer url: {e}")))?;
        url.query_pairs_mut()
            .append_pair("response_type", "code")
            .append_pair("client_id", &client.client_id)
            .append_pair("redirect_uri", &redirect_uri)
            .append_pair("state", &state)
            .append_pair("experiment", &req.experiment)
            .append_pair("role", &req.role)
            .append_pair("login_hint", &req.principal);
        let expires_at = now + cfg.lifetimes.bootstrap_session;
        let h = hash(&handle);
        inner.by_state.insert(state.clone(), h.clone());
        inner.sessions.insert(
            h,
            Session {
                principal: req.principal.clone(),
                experiment: req.experiment.clone(),
                role: req.role.clone(),
                state,
                redirect_uri,
                expires_at,
                status: SessionState::Pending,
            },
        );
        self.sessions_created.fetch_add(1, Ordering::SeqCst);
        tracing::info!(principal = %req.principal, experiment = %req.experiment, role = %req.role, "bootstrap session started");
        Ok(AuthSession {
            url: url.to_string(),
            poll_handle: SecretString::new(handle),
            expires_at,
        })
    }

    /// The issuer redirected the browser back with a code or an error.
    pub fn callback(
        &self,
        state: &str,
        code: Option<&str>,
        error: Option<&str>,
    ) -> Result<(), BrokerError> {
        let mut inner = self.lock();
        let h = inner
            .by_state
            .get(state)
            .cloned()
            .ok_or_else(|| err(ErrorCode::UnknownSession, "no session for this state"))?;
        let session = inner
            .sessions
            .get_mut(&h)
            .ok_or_else(|| err(ErrorCode::UnknownSession, "session gone"))?;
        if !matches!(session.status, SessionState::Pending) {
            return Err(err(ErrorCode::InvalidRequest, "session already completed"));
        }
        session.status = match (code, error) {
            (Some(c), _) => SessionState::Approved(c.to_string()),
            (None, e) => SessionState::Denied(e.unwrap_or("access_denied").to_string()),
        };
        Ok(())
    }

    pub async fn poll(&self, handle: &SecretString) -> Result<PollResponse, BrokerError> {
        self.tick();
        let now = self.now();
        let h = hash(handle.expose());
        let session = {
            let mut inner = self.lock();
            let s = inner
                .sessions
                .get(&h)
                .cloned()
                .ok_or_else(|| err(ErrorCode::UnknownSession, "unknown poll handle"))?;
            if now >= s.expires_at {
                inner.sessions.remove(&h);
                inner.by_state.remove(&s.state);
                return Err(err(ErrorCode::SessionExpired, "bootstrap session expired"));
            }
            match &s.status {
                SessionState::Pending => return Ok(PollResponse::Pending),
                SessionState::Denied(reason) => {
                    inner.sessions.remove(&h);
                    inner.by_state.remove(&s.state);
                    return Err(err(
                        ErrorCode::ConsentDenied,
                        format!("consent not given: {reason}"),
                    ));
                }
                SessionState::Approved(_) => {
                    inner.sessions.remove(&h);
                    inner.by_state.remove(&s.state);
                    s
                }
            }
        };
        let SessionState::Approved(code) = &session.status else {
            unreachable!()
        };
        let cfg = self.config();
        let exp = Self::experiment(&cfg, &session.experiment, &session.role)?;
        let mut req = Self::client_request(&cfg, exp, grant::AUTHORIZATION_CODE);
        req.code = Some(code.clone());
        req.redirect_uri = Some(session.redirect_uri.clone());
        let resp = match self.upstream.token(&exp.issuer_url, req).await {
            Ok(r) => r,
            Err(UpstreamError::Unreachable(m)) => {
                // Put the session back so the client can keep polling.
                let mut inner = self.lock();
                inner.by_state.insert(session.state.clone(), h.clone());
                inner.sessions.insert(h, session);
                return Err(err(ErrorCode::IssuerUnreachable, m));
            }
            Err(UpstreamError::Rejected(body)) => {
                return Err(err(
                    ErrorCode::InvalidGrant,
                    format!("code redemption failed: {}", body.error),
                ))
            }
        };
        let (Some(access), Some(refresh)) = (resp.access_token, resp.refresh_token) else {
            return Err(err(
                ErrorCode::UpstreamError,
                "issuer response lacks tokens",
            ));
        };
        let claims =
            peek_claims(&access).map_err(|e| err(ErrorCode::UpstreamError, e.to_string()))?;
        let key = RecordKey::new(&session.experiment, &session.role, &claims.sub);
        let lock = self.record_lock(&key);
        let _g = lock.write().await;
        let mut inner = self.lock();
        let robot = inner.records.get(&key).is_some_and(|r| r.robot);
        inner.records.insert(
            key.clone(),
            BrokerSecretRecord {
                key: key.clone(),
                issuer: exp.issuer.clone(),
                refresh_handle: refresh,
                obtained_at: now,
                last_used: now,
                robot,
            },
        );
        let grant = self.issue_token(&mut inner, &cfg, &key, now);
        self.persist(&inner)?;
        tracing::info!(record = %key, "bootstrap complete");
        Ok(PollResponse::Complete {
            broker_token: grant,
            access_token: AccessToken {
                access_token: access,
                expires_at: claims.exp,
                scope: resp.scope.unwrap_or_default(),
            },
        })
    }

    fn secondary_key(
        &self,
        exp: &ExperimentConfig,
        experiment: &str,
        principal: &str,
    ) -> Option<String> {
        self.lock()
            .enrollments
            .get(&enrollment_key(experiment, principal))
            .cloned()
            .or_else(|| exp.secondary_keys.get(principal).cloned())
    }

    pub async fn renew(&self, req: &RenewRequest) -> Result<BrokerTokenGrant, BrokerError> {
        self.tick();
        let cfg = self.config();
        let exp = Self::experiment(&cfg, &req.experiment, &req.role)?;
        let a = &req.assertion;
        if a.realm != exp.realm {
            return Err(err(
                ErrorCode::BadSignature,
                format!("assertion realm {} is not {}", a.realm, exp.realm),
            ));
        }
        let now = self.now();
        let public = self
            .secondary_key(exp, &req.experiment, &a.principal)
            .ok_or_else(|| {
                err(
                    ErrorCode::NotEnrolled,
                    format!("no secondary key for {}", a.principal),
                )
            })?;
        check_assertion(a, &public, now).map_err(|e| match e {
            AssertionError::Stale { .. } => err(ErrorCode::StaleTimestamp, e.to_string()),
            _ => err(ErrorCode::BadSignature, e.to_string()),
        })?;
        {
            let mut inner = self.lock();
            inner.seen_assertions.retain(|_, until| *until > now);
            if inner.seen_assertions.contains_key(&a.signature) {
                return Err(err(ErrorCode::BadSignature, "assertion already used"));
            }
            inner
                .seen_assertions
                .insert(a.signature.clone(), a.timestamp + ASSERTION_WINDOW + 1);
        }
        let key = RecordKey::new(&req.experiment, &req.role, &a.principal);
        let lock = self.record_lock(&key);
        let _g = lock.write().await;
        let handle = self
            .lock()
            .records
            .get(&key)
            .map(|r| r.refresh_handle.clone())
            .ok_or_else(|| {
                err(
                    ErrorCode::BootstrapRequired,
                    format!("no stored refresh token for {key}"),
                )
            })?;
        let mut up = Self::client_request(&cfg, exp, grant::REFRESH_RENEWAL);
        up.refresh_token = Some(handle);
        let resp = match self.upstream.token(&exp.issuer_url, up).await {
            Ok(r) => r,
            Err(e) => {
                let e = upstream_error(e);
                if e.code == ErrorCode::BootstrapRequired {
                    let mut inner = self.lock();
                    inner.records.remove(&key);
                    self.persist(&inner)?;
                    tracing::warn!(record = %key, "refresh token no longer valid at issuer; record dropped");
                }
                return Err(e);
            }
        };
        let refresh = resp.refresh_token.ok_or_else(|| {
            err(
                ErrorCode::UpstreamError,
                "renewal returned no refresh token",
            )
        })?;
        let mut inner = self.lock();
        if let Some(rec) = inner.records.get_mut(&key) {
            rec.refresh_handle = refresh;
            rec.obtained_at = now;
        }
        let grant = self.issue_token(&mut inner, &cfg, &key, now);
        self.persist(&inner)?;
        tracing::info!(record = %key, "broker token renewed via secondary assertion");
        Ok(grant)
    }

    fn token_meta(&self, token: &SecretString, now: i64) -> Result<TokenMeta, BrokerError> {
        let inner = self.lock();
        let meta = inner
            .tokens
            .get(&hash(token.expose()))
            .cloned()
            .ok_or_else(|| {
                err(
                    ErrorCode::BrokerTokenUnknown,
                    "broker token not recognised; bootstrap needed",
                )
            })?;
        if now >= meta.expires_at {
            return Err(err(
                ErrorCode::BrokerTokenExpired,
                "broker token expired; renew",
            ));
        }
        Ok(meta)
    }

    pub async fn exchange(
        &self,
        token: &SecretString,
        opts: &ExchangeOptions,
    ) -> Result<AccessToken, BrokerError> {
        self.tick();
        let now = self.now();
        let meta = self.token_meta(token, now)?;
        let key = meta.key;
        let cfg = self.config();
        let exp = Self::experiment(&cfg, &key.experiment, &key.role)?;
        let scope = match &opts.scopes {
            Some(list) if !list.is_empty() => {
                for s in list {
                    parse_scope(s)
                        .map_err(|e| err(ErrorCode::InvalidRequest, format!("scope {s}: {e}")))?;
                }
                Some(list.join(" "))
            }
            _ => None,
        };
        {
            let limit = cfg.rate_limit_for(&key.experiment);
            let mut inner = self.lock();
            if let Err(retry) =
                inner
                    .limiter
                    .admit(&(key.experiment.clone(), key.principal.clone()), limit, now)
            {
                tracing::info!(record = %key, retry, "exchange rate limited");
                return Err(BrokerError::rate_limited(retry));
            }
        }
        let lock = self.record_lock(&key);
        let _g = lock.read().await;
        let handle = self
            .lock()
            .records
            .get(&key)
            .map(|r| r.refresh_handle.clone())
            .ok_or_else(|| {
                err(
                    ErrorCode::BootstrapRequired,
                    format!("no stored refresh token for {key}"),
                )
            })?;
        let mut up = Self::client_request(&cfg, exp, grant::REFRESH_TOKEN);
        up.refresh_token = Some(handle.clone());
        up.scope = scope;
        up.audience = opts.audience.clone();
        let resp = match self.upstream.token(&exp.issuer_url, up).await {
            Ok(r) => r,
            Err(e) => {
                let e = upstream_error(e);
                if e.code == ErrorCode::BootstrapRequired {
                    let mut inner = self.lock();
                    if inner
                        .records
                        .get(&key)
                        .is_some_and(|r| r.refresh_handle == handle)
                    {
                        inner.records.remove(&key);
                        self.persist(&inner)?;
                    }
                }
                return Err(e);
            }
        };
        let access = resp
            .access_token
            .ok_or_else(|| err(ErrorCode::UpstreamError, "issuer returned no access token"))?;
        let claims =
            peek_claims(&access).map_err(|e| err(ErrorCode::UpstreamError, e.to_string()))?;
        if let Some(rec) = self.lock().records.get_mut(&key) {
            rec.last_used = now;
        }
        tracing::debug!(record = %key, jti = %claims.jti, "access token issued");
        Ok(AccessToken {
            access_token: access,
            expires_at: claims.exp,
            scope: resp.scope.unwrap_or_default(),
        })
    }

    fn check_admin(cfg: &BrokerConfig, admin: &SecretString) -> Result<(), BrokerError> {
        let want = cfg
            .admin
            .as_ref()
            .ok_or_else(|| err(ErrorCode::Unauthenticated, "no admin credential configured"))?;
        let got = hex::encode(Sha256::digest(admin.expose().as_bytes()));
        if got.eq_ignore_ascii_case(&want.credential_sha256) {
            Ok(())
        } else {
            Err(err(ErrorCode::Unauthenticated, "admin credential rejected"))
        }
    }

    pub fn store_for_robot(
        &self,
        admin: &SecretString,
        req: &RobotRequest,
    ) -> Result<RobotResponse, BrokerError> {
        self.tick();
        let cfg = self.config();
        Self::check_admin(&cfg, admin)?;
        let exp = Self::experiment(&cfg, &req.experiment, &req.role)?;
        let now = self.now();
        let key = RecordKey::new(&req.experiment, &req.role, &req.principal);
        let meta = self
            .token_meta(&req.grant, now)
            .map_err(|e| err(ErrorCode::InvalidGrant, e.message))?;
        if meta.key != key {
            return Err(err(
                ErrorCode::InvalidGrant,
                format!("grant is bound to {}, not {key}", meta.key),
            ));
        }
        if req.public_key.len() != 64 || hex::decode(&req.public_key).is_err() {
            return Err(err(
                ErrorCode::InvalidRequest,
                "public key must be 32 bytes hex",
            ));
        }
        let ek = enrollment_key(&req.experiment, &req.principal);
        let mut inner = self.lock();
        if inner.enrollments.contains_key(&ek) || exp.secondary_keys.contains_key(&req.principal) {
            return Err(err(
                ErrorCode::Duplicate,
                format!("{} already enrolled for {}", req.principal, req.experiment),
            ));
        }
        let rec = inner.records.get_mut(&key).ok_or_else(|| {
            err(
                ErrorCode::BootstrapRequired,
                format!("no stored refresh token for {key}"),
            )
        })?;
        rec.robot = true;
        inner.enrollments.insert(ek, req.public_key.clone());
        self.persist(&inner)?;
        tracing::info!(record = %key, "robot enrolled");
        Ok(RobotResponse {
            experiment: key.experiment,
            role: key.role,
            principal: key.principal,
        })
    }

    pub fn apply_config_as(
        &self,
        admin: &SecretString,
        document: &str,
    ) -> Result<ChangeReport, BrokerError> {
        Self::check_admin(&self.config(), admin)?;
        self.apply_config(document)
    }

    /// Parse, validate and apply a new config document. On any error the
    /// running config is untouched.
    pub fn apply_config(&self, document: &str) -> Result<ChangeReport, BrokerError> {
        let new = BrokerConfig::parse(document)
            .map_err(|e| err(ErrorCode::InvalidConfig, e.to_string()))?;
        let _phase = self.reconfig.lock().expect("reconfig lock");
        let old = self.config();
        let report = diff(&old, &new);
        if report.is_empty() {
            return Ok(report);
        }
        let touched: Vec<&String> = old
            .experiments
            .keys()
            .filter(|e| new.experiments.get(*e) != old.experiments.get(*e))
            .collect();
        {
            let mut inner = self.lock();
            let before = (inner.records.len(), inner.enrollments.len());
            inner
                .records
                .retain(|k, r| match new.experiments.get(&k.experiment) {
                    None => false,
                    Some(e) => {
                        let o = &old.experiments[&k.experiment];
                        e.issuer == o.issuer
                            && e.issuer_url == o.issuer_url
                            && e.issuer == r.issuer
                            && e.roles.contains(&k.role)
                    }
                });
            inner.enrollments.retain(|k, _| {
                new.experiments
                    .contains_key(k.split('\u{0}').next().unwrap_or(""))
            });
            inner.limiter.reset_where(|(e, _)| touched.contains(&e));
            if (inner.records.len(), inner.enrollments.len()) != before {
                self.persist(&inner)?;
            }
        }
        *self.config.write().expect("config lock") = Arc::new(new);
        tracing::info!(added = ?report.added, removed = ?report.removed, modified = ?report.modified, "config applied");
        Ok(report)
    }
}
