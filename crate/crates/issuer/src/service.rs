//! The issuer's state machine: clients, consent, auth codes, refresh records
//! and signing keys for every configured issuer name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Mutex, RwLock};

use gridtoken_core::claims::{experiment_group, role_group};
use gridtoken_core::oauth::{
    error_code, grant, DiscoveryDocument, OAuthErrorBody, TokenRequest, TokenResponse,
};
use gridtoken_core::scope::{downscope, join_scopes, parse_scope_list, Scope};
use gridtoken_core::secret::{random_handle, random_hex, SecretString};
use gridtoken_core::{
    mint, ClaimSet, KeyRing, KeySet, Lifetimes, SharedClock, SigningKey, ANY_AUDIENCE,
    PROFILE_VERSION,
};
use gridtoken_registry::{DirectoryDocument, GeneratedConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssuerError {
    #[error("unknown issuer `{0}`")]
    UnknownIssuer(String),
    #[error("unknown client `{0}`")]
    UnknownClient(String),
    #[error("redirect uri not registered for client")]
    BadRedirect,
    #[error("issuer `{issuer}` does not serve experiment `{experiment}`")]
    UnknownExperiment { issuer: String, experiment: String },
    #[error("`{principal}` does not hold {experiment}/{role}")]
    NotAuthorized {
        principal: String,
        experiment: String,
        role: String,
    },
    #[error("user denied consent")]
    ConsentDenied,
    #[error("client secret must be at least 32 bytes of hex")]
    WeakSecret,
}

impl IssuerError {
    pub fn oauth_code(&self) -> &'static str {
        match self {
            IssuerError::UnknownIssuer(_) => error_code::NOT_FOUND,
            IssuerError::UnknownClient(_) => error_code::INVALID_CLIENT,
            IssuerError::BadRedirect
            | IssuerError::UnknownExperiment { .. }
            | IssuerError::WeakSecret => error_code::INVALID_REQUEST,
            IssuerError::NotAuthorized { .. } | IssuerError::ConsentDenied => {
                error_code::ACCESS_DENIED
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRegistration {
    pub client_id: String,
    pub client_secret: SecretString,
    pub issuer: String,
    /// Empty means any redirect target is accepted.
    pub redirect_uris: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefreshTokenRecord {
    pub handle: SecretString,
    pub principal: String,
    pub issuer: String,
    pub experiment: String,
    pub role: String,
    pub scopes: Vec<Scope>,
    pub issued_at: i64,
    pub expires_at: i64,
    pub renewable: bool,
    pub client_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthCodeRecord {
    pub code: String,
    pub principal: String,
    pub issuer: String,
    pub experiment: String,
    pub role: String,
    pub scopes: Vec<Scope>,
    pub client_id: String,
    pub redirect_uri: Option<String>,
    pub expires_at: i64,
    pub redeemed: bool,
}

/// One consent decision.
#[derive(Debug, Clone)]
pub struct AuthorizeRequest {
    pub issuer: String,
    pub client_id: String,
    pub redirect_uri: Option<String>,
    pub experiment: String,
    pub role: String,
    pub principal: String,
    pub approve: bool,
}

struct IssuerEntry {
    ring: RwLock<KeyRing>,
    key_serial: Mutex<u32>,
    /// experiment -> role -> scopes
    grants: BTreeMap<String, BTreeMap<String, Vec<Scope>>>,
}

#[derive(Default)]
struct Grants {
    codes: HashMap<String, AuthCodeRecord>,
    refresh: HashMap<String, RefreshTokenRecord>,
    issued_handles: Vec<String>,
}

pub struct IssuerService {
    base: String,
    clock: SharedClock,
    lifetimes: Lifetimes,
    auto_approve: bool,
    issuers: RwLock<BTreeMap<String, IssuerEntry>>,
    clients: RwLock<BTreeMap<String, ClientRegistration>>,
    members: RwLock<BTreeSet<(String, String, String)>>,
    grants: Mutex<Grants>,
    jti_serial: Mutex<u64>,
}

fn oauth(code: &str, desc: impl Into<String>) -> OAuthErrorBody {
    OAuthErrorBody::new(code, desc)
}

impl IssuerService {
    pub fn new(base: impl Into<String>, clock: SharedClock, lifetimes: Lifetimes) -> Self {
        IssuerService {
            base: base.into().trim_end_matches('/').to_string(),
            clock,
            lifetimes,
            auto_approve: false,
            issuers: RwLock::new(BTreeMap::new()),
            clients: RwLock::new(BTreeMap::new()),
            members: RwLock::new(BTreeSet::new()),
            grants: Mutex::new(Grants::default()),
            jti_serial: Mutex::new(0),
        }
    }

    /// Let `login_hint` on GET /authorize stand in for the browser.
    pub fn with_auto_approve(mut self, on: bool) -> Self {
        self.auto_approve = on;
        self
    }

    pub fn auto_approve(&self) -> bool {
        self.auto_approve
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn lifetimes(&self) -> Lifetimes {
        self.lifetimes
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn issuer_url(&self, name: &str) -> String {
        format!("{}/{name}", self.base)
    }

    /// Map an issuer URL back to its name.
    pub fn issuer_name(&self, url: &str) -> Option<String> {
        let rest = url
            .trim_end_matches('/')
            .strip_prefix(&self.base)?
            .strip_prefix('/')?;
        (!rest.is_empty() && !rest.contains('/')).then(|| rest.to_string())
    }

    /// Load issuer definitions and role membership. Existing signing keys,
    /// clients and refresh records are kept.
    pub fn configure(&self, config: &GeneratedConfig, directory: &DirectoryDocument) {
        let mut issuers = self.issuers.write().expect("issuer lock");
        for (name, entry) in &config.issuers {
            let grants = entry
                .experiments
                .iter()
                .map(|(exp, g)| {
                    let roles = g
                        .roles
                        .iter()
                        .map(|(role, scopes)| {
                            let parsed = scopes.iter().filter_map(|s| s.parse().ok()).collect();
                            (role.clone(), parsed)
                        })
                        .collect();
                    (exp.clone(), roles)
                })
                .collect();
            match issuers.get_mut(name) {
                Some(existing) => existing.grants = grants,
                None => {
                    issuers.insert(
                        name.clone(),
                        IssuerEntry {
                            ring: RwLock::new(KeyRing::new(SigningKey::generate(format!(
                                "{name}-1"
                            )))),
                            key_serial: Mutex::new(1),
                            grants,
                        },
                    );
                }
            }
        }
        issuers.retain(|name, _| config.issuers.contains_key(name));
        drop(issuers);
        let members = directory
            .members
            .iter()
            .flat_map(|m| {
                m.roles
                    .iter()
                    .map(move |r| (m.user.clone(), r.experiment.clone(), r.role.clone()))
            })
            .collect();
        *self.members.write().expect("member lock") = members;
    }

    pub fn issuer_names(&self) -> Vec<String> {
        self.issuers
            .read()
            .expect("issuer lock")
            .keys()
            .cloned()
            .collect()
    }

    /// Register a client with a fresh 32-byte secret and return the secret.
    pub fn register_client(
        &self,
        issuer: &str,
        client_id: &str,
    ) -> Result<SecretString, IssuerError> {
        let secret = SecretString::new(random_hex(32));
        self.register_client_with_secret(issuer, client_id, secret.clone(), Vec::new())?;
        Ok(secret)
    }

    pub fn register_client_with_secret(
        &self,
        issuer: &str,
        client_id: &str,
        secret: SecretString,
        redirect_uris: Vec<String>,
    ) -> Result<(), IssuerError> {
        if !self
            .issuers
            .read()
            .expect("issuer lock")
            .contains_key(issuer)
        {
            return Err(IssuerError::UnknownIssuer(issuer.into()));
        }
        let s = secret.expose();
        if s.len() < 64 || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(IssuerError::WeakSecret);
        }
        self.clients.write().expect("client lock").insert(
            client_key(client_id, issuer),
            ClientRegistration {
                client_id: client_id.into(),
                client_secret: secret,
                issuer: issuer.into(),
                redirect_uris,
            },
        );
        Ok(())
    }

    pub fn discovery(&self, issuer: &str) -> Result<DiscoveryDocument, IssuerError> {
        self.require_issuer(issuer)?;
        let url = self.issuer_url(issuer);
        Ok(DiscoveryDocument {
            authorization_endpoint: format!("{url}/authorize"),
            token_endpoint: format!("{url}/token"),
            jwks_uri: format!("{url}/jwks"),
            grant_types_supported: vec![
                grant::AUTHORIZATION_CODE.into(),
                grant::REFRESH_TOKEN.into(),
                grant::REFRESH_RENEWAL.into(),
            ],
            issuer: url,
        })
    }

    pub fn jwks(&self, issuer: &str) -> Result<KeySet, IssuerError> {
        let issuers = self.issuers.read().expect("issuer lock");
        let entry = issuers
            .get(issuer)
            .ok_or_else(|| IssuerError::UnknownIssuer(issuer.into()))?;
        let ring = entry.ring.read().expect("ring lock");
        Ok(ring.public_set())
    }

    /// Add a new signing key; earlier keys stay published.
    pub fn rotate_key(&self, issuer: &str) -> Result<String, IssuerError> {
        let issuers = self.issuers.read().expect("issuer lock");
        let entry = issuers
            .get(issuer)
            .ok_or_else(|| IssuerError::UnknownIssuer(issuer.into()))?;
        let mut serial = entry.key_serial.lock().expect("serial lock");
        *serial += 1;
        let kid = format!("{issuer}-{serial}");
        entry
            .ring
            .write()
            .expect("ring lock")
            .rotate(SigningKey::generate(kid.clone()))
            .expect("fresh kid");
        Ok(kid)
    }

    fn require_issuer(&self, issuer: &str) -> Result<(), IssuerError> {
        if self
            .issuers
            .read()
            .expect("issuer lock")
            .contains_key(issuer)
        {
            Ok(())
        } else {
            Err(IssuerError::UnknownIssuer(issuer.into()))
        }
    }

    /// Validate the parts of an authorize request that do not depend on the
    /// user: issuer, client, redirect target, experiment and role.
    pub fn check_client(
        &self,
        issuer: &str,
        client_id: &str,
        redirect_uri: Option<&str>,
        experiment: &str,
        role: &str,
    ) -> Result<(), IssuerError> {
        self.require_issuer(issuer)?;
        let clients = self.clients.read().expect("client lock");
        let reg = clients
            .get(&client_key(client_id, issuer))
            .ok_or_else(|| IssuerError::UnknownClient(client_id.into()))?;
        if let Some(uri) = redirect_uri {
            if !reg.redirect_uris.is_empty() && !reg.redirect_uris.iter().any(|u| u == uri) {
                return Err(IssuerError::BadRedirect);
            }
        }
        self.role_scopes(issuer, experiment, role).map(|_| ())
    }

    fn role_scopes(
        &self,
        issuer: &str,
        experiment: &str,
        role: &str,
    ) -> Result<Vec<Scope>, IssuerError> {
        let issuers = self.issuers.read().expect("issuer lock");
        let entry = issuers
            .get(issuer)
            .ok_or_else(|| IssuerError::UnknownIssuer(issuer.into()))?;
        let unknown = || IssuerError::UnknownExperiment {
            issuer: issuer.into(),
            experiment: experiment.into(),
        };
        entry
            .grants
            .get(experiment)
            .ok_or_else(unknown)?
            .get(role)
            .cloned()
            .ok_or_else(unknown)
    }

    fn holds(&self, principal: &str, experiment: &str, role: &str) -> bool {
        self.members.read().expect("member lock").contains(&(
            principal.into(),
            experiment.into(),
            role.into(),
        ))
    }

    /// Record a consent decision; on approval returns a single-use code.
    pub fn authorize(&self, req: &AuthorizeRequest) -> Result<String, IssuerError> {
        self.check_client(
            &req.issuer,
            &req.client_id,
            req.redirect_uri.as_deref(),
            &req.experiment,
            &req.role,
        )?;
        if !req.approve {
            return Err(IssuerError::ConsentDenied);
        }
        if !self.holds(&req.principal, &req.experiment, &req.role) {
            return Err(IssuerError::NotAuthorized {
                principal: req.principal.clone(),
                experiment: req.experiment.clone(),
                role: req.role.clone(),
            });
        }
        let scopes = self.role_scopes(&req.issuer, &req.experiment, &req.role)?;
        let code = random_handle();
        let record = AuthCodeRecord {
            code: code.clone(),
            principal: req.principal.clone(),
            issuer: req.issuer.clone(),
            experiment: req.experiment.clone(),
            role: req.role.clone(),
            scopes,
            client_id: req.client_id.clone(),
            redirect_uri: req.redirect_uri.clone(),
            expires_at: self.now() + self.lifetimes.auth_code,
            redeemed: false,
        };
        self.grants
            .lock()
            .expect("grant lock")
            .codes
            .insert(code.clone(), record);
        tracing::info!(issuer = %req.issuer, principal = %req.principal, experiment = %req.experiment, role = %req.role, "consent approved");
        Ok(code)
    }

    fn authenticate_client(&self, issuer: &str, req: &TokenRequest) -> Result<(), OAuthErrorBody> {
        let clients = self.clients.read().expect("client lock");
        match clients.get(&client_key(&req.client_id, issuer)) {
            Some(reg) if reg.client_secret.expose() == req.client_secret.expose() => Ok(()),
            _ => Err(oauth(
                error_code::INVALID_CLIENT,
                "client authentication failed",
            )),
        }
    }

    /// The token endpoint. Every grant type is handled under one lock so
    /// code redemption and handle rotation are atomic.
    pub fn token(&self, issuer: &str, req: &TokenRequest) -> Result<TokenResponse, OAuthErrorBody> {
        if self.require_issuer(issuer).is_err() {
            return Err(oauth(
                error_code::NOT_FOUND,
                format!("unknown issuer {issuer}"),
            ));
        }
        self.authenticate_client(issuer, req)?;
        match req.grant_type.as_str() {
            grant::AUTHORIZATION_CODE => self.redeem_code(issuer, req),
            grant::REFRESH_TOKEN => self.refresh_exchange(issuer, req),
            grant::REFRESH_RENEWAL => self.refresh_renewal(issuer, req),
            other => Err(oauth(
                error_code::UNSUPPORTED_GRANT_TYPE,
                format!("grant type {other} not supported"),
            )),
        }
    }

    fn redeem_code(
        &self,
        issuer: &str,
        req: &TokenRequest,
    ) -> Result<TokenResponse, OAuthErrorBody> {
        let code = req
            .code
            .as_deref()
            .ok_or_else(|| oauth(error_code::INVALID_REQUEST, "code missing"))?;
        let now = self.now();
        let mut g = self.grants.lock().expect("grant lock");
        let rec = g
            .codes
            .get_mut(code)
            .ok_or_else(|| oauth(error_code::INVALID_GRANT, "unknown authorization code"))?;
        if rec.redeemed {
            return Err(oauth(
                error_code::INVALID_GRANT,
                "authorization code already used",
            ));
        }
        if rec.issuer != issuer || rec.client_id != req.client_id {
            return Err(oauth(
                error_code::INVALID_GRANT,
                "code was issued to another client",
            ));
        }
        if rec.redirect_uri.is_some()
            && req.redirect_uri.is_some()
            && rec.redirect_uri != req.redirect_uri
        {
            return Err(oauth(error_code::INVALID_GRANT, "redirect uri mismatch"));
        }
        if now >= rec.expires_at {
            return Err(oauth(
                error_code::INVALID_GRANT,
                "authorization code expired",
            ));
        }
        rec.redeemed = true;
        let rec = rec.clone();
        // A fresh bootstrap supersedes any earlier record for the same context.
        g.refresh.retain(|_, r| {
            !(r.principal == rec.principal
                && r.issuer == rec.issuer
                && r.experiment == rec.experiment
                && r.role == rec.role
                && r.client_id == rec.client_id)
        });
        let handle = random_handle();
        let record = RefreshTokenRecord {
            handle: SecretString::new(handle.clone()),
            principal: rec.principal.clone(),
            issuer: issuer.into(),
            experiment: rec.experiment.clone(),
            role: rec.role.clone(),
            scopes: rec.scopes.clone(),
            issued_at: now,
            expires_at: now + self.lifetimes.refresh_token,
            renewable: true,
            client_id: rec.client_id.clone(),
        };
        g.issued_handles.push(handle.clone());
        g.refresh.insert(handle.clone(), record.clone());
        drop(g);
        let access = self.mint_access(&record, &record.scopes, vec![ANY_AUDIENCE.into()], now)?;
        Ok(TokenResponse {
            access_token: Some(access),
            token_type: "Bearer".into(),
            expires_in: Some(self.lifetimes.access_token),
            refresh_token: Some(SecretString::new(handle)),
            refresh_expires_in: Some(self.lifetimes.refresh_token),
            scope: Some(join_scopes(&record.scopes)),
        })
    }

    fn live_record(
        &self,
        g: &Grants,
        issuer: &str,
        req: &TokenRequest,
        now: i64,
    ) -> Result<RefreshTokenRecord, OAuthErrorBody> {
        let handle = req
            .refresh_token
            .as_ref()
            .ok_or_else(|| oauth(error_code::INVALID_REQUEST, "refresh_token missing"))?;
        let rec = g
            .refresh
            .get(handle.expose())
            .ok_or_else(|| oauth(error_code::INVALID_GRANT, "unknown refresh token"))?;
        if rec.issuer != issuer || rec.client_id != req.client_id {
            return Err(oauth(
                error_code::INVALID_GRANT,
                "refresh token belongs to another client",
            ));
        }
        if now >= rec.expires_at {
            return Err(oauth(error_code::INVALID_GRANT, "refresh token expired"));
        }
        if !self.holds(&rec.principal, &rec.experiment, &rec.role) {
            return Err(oauth(error_code::INVALID_GRANT, "role membership revoked"));
        }
        Ok(rec.clone())
    }

    fn refresh_exchange(
        &self,
        issuer: &str,
        req: &TokenRequest,
    ) -> Result<TokenResponse, OAuthErrorBody> {
        let now = self.now();
        let rec = {
            let g = self.grants.lock().expect("grant lock");
            self.live_record(&g, issuer, req, now)?
        };
        let requested = match req.scope.as_deref() {
            Some(text) => parse_scope_list(text)
                .map_err(|e| oauth(error_code::INVALID_SCOPE, e.to_string()))?,
            None => Vec::new(),
        };
        let scopes = downscope(&rec.scopes, &requested).map_err(|refused| {
            oauth(
                error_code::INVALID_SCOPE,
                format!("scope {} not granted", refused.0),
            )
        })?;
        let aud: Vec<String> = match req.audience.as_deref().map(str::trim) {
            Some(a) if !a.is_empty() => a.split_whitespace().map(String::from).collect(),
            _ => vec![ANY_AUDIENCE.into()],
        };
        let access = self.mint_access(&rec, &scopes, aud, now)?;
        Ok(TokenResponse {
            access_token: Some(access),
            token_type: "Bearer".into(),
            expires_in: Some(self.lifetimes.access_token),
            refresh_token: None,
            refresh_expires_in: None,
            scope: Some(join_scopes(&scopes)),
        })
    }

    fn refresh_renewal(
        &self,
        issuer: &str,
        req: &TokenRequest,
    ) -> Result<TokenResponse, OAuthErrorBody> {
        let now = self.now();
        let mut g = self.grants.lock().expect("grant lock");
        let old = self.live_record(&g, issuer, req, now)?;
        g.refresh.remove(old.handle.expose());
        let handle = random_handle();
        let record = RefreshTokenRecord {
            handle: SecretString::new(handle.clone()),
            issued_at: now,
            expires_at: now + self.lifetimes.refresh_token,
            ..old
        };
        g.issued_handles.push(handle.clone());
        g.refresh.insert(handle.clone(), record);
        tracing::info!(issuer, "refresh token rotated");
        Ok(TokenResponse {
            access_token: None,
            token_type: "Bearer".into(),
            expires_in: None,
            refresh_token: Some(SecretString::new(handle)),
            refresh_expires_in: Some(self.lifetimes.refresh_token),
            scope: None,
        })
    }

    fn next_jti(&self, issuer: &str) -> String {
        let mut n = self.jti_serial.lock().expect("jti lock");
        *n += 1;
        format!("{issuer}-{}-{}", *n, random_hex(6))
    }

    fn mint_access(
        &self,
        rec: &RefreshTokenRecord,
        scopes: &[Scope],
        aud: Vec<String>,
        now: i64,
    ) -> Result<String, OAuthErrorBody> {
        let claims = ClaimSet {
            iss: self.issuer_url(&rec.issuer),
            sub: rec.principal.clone(),
            aud,
            exp: now + self.lifetimes.access_token,
            iat: now,
            nbf: now,
            jti: self.next_jti(&rec.issuer),
            scope: scopes.to_vec(),
            groups: vec![
                experiment_group(&rec.experiment),
                role_group(&rec.experiment, &rec.role),
            ],
            ver: PROFILE_VERSION.into(),
        };
        let issuers = self.issuers.read().expect("issuer lock");
        let entry = issuers
            .get(&rec.issuer)
            .ok_or_else(|| oauth(error_code::NOT_FOUND, "issuer removed"))?;
        let ring = entry.ring.read().expect("ring lock");
        mint(&claims, ring.current()).map_err(|e| oauth("server_error", e.to_string()))
    }

    /// Every refresh handle this issuer has ever handed out, live or not.
    pub fn issued_refresh_handles(&self) -> Vec<String> {
        self.grants
            .lock()
            .expect("grant lock")
            .issued_handles
            .clone()
    }

    pub fn refresh_record(&self, handle: &str) -> Option<RefreshTokenRecord> {
        self.grants
            .lock()
            .expect("grant lock")
            .refresh
            .get(handle)
            .cloned()
    }

    /// Live (unexpired) refresh records for one principal/experiment/role/client.
    pub fn live_records(
        &self,
        principal: &str,
        experiment: &str,
        role: &str,
        client_id: &str,
    ) -> Vec<RefreshTokenRecord> {
        let now = self.now();
        self.grants
            .lock()
            .expect("grant lock")
            .refresh
            .values()
            .filter(|r| {
                r.principal == principal
                    && r.experiment == experiment
                    && r.role == role
                    && r.client_id == client_id
                    && r.expires_at > now
            })
            .cloned()
            .collect()
    }

    /// Drop a refresh record, as if the issuer had revoked it.
    pub fn revoke(&self, handle: &str) -> bool {
        self.grants
            .lock()
            .expect("grant lock")
            .refresh
            .remove(handle)
            .is_some()
    }
}

fn client_key(client_id: &str, issuer: &str) -> String {
    format!("{issuer}\u{0}{client_id}")
}
