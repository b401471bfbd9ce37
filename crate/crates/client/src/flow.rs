//! The get-token decision ladder: cached, exchanged, renewed, bootstrapped.

use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use gridtoken_broker::{
    BeginRequest, BrokerApi, BrokerError, ErrorCode, ExchangeOptions, PollResponse, RenewRequest,
    SecondaryKey,
};
use gridtoken_core::claims::{experiment_group, role_group};
use gridtoken_core::scope::{covered_by, parse_scope};
use gridtoken_core::secret::SecretString;
use gridtoken_core::{peek_claims, Scope, SharedClock, ANY_AUDIENCE};
use thiserror::Error;

use crate::discovery::{discover_bearer, EnvVars, GETTOKEN_SECONDARY_KEY};
use crate::layout::{
    read_broker_token, write_token_files, TokenFileLayout, WriteError, DEFAULT_ROLE,
};

/// A cached token is reused only with more than this much life left.
pub const MIN_REMAINING: i64 = 60;
pub const POLL_INTERVAL: u64 = 5;
pub const POLL_TIMEOUT: i64 = 900;

#[derive(Debug, Clone, Default)]
pub struct ClientOptions {
    pub experiment: String,
    pub role: Option<String>,
    pub scopes: Vec<String>,
    pub audience: Option<String>,
    pub out: Option<PathBuf>,
    /// Identity hint; also appended to the broker-token file name.
    pub credkey: Option<String>,
    pub secondary_key: Option<PathBuf>,
    /// Never start a browser flow; report auth-required instead.
    pub no_oidc: bool,
}

impl ClientOptions {
    pub fn new(experiment: impl Into<String>) -> Self {
        ClientOptions {
            experiment: experiment.into(),
            ..Default::default()
        }
    }

    pub fn role(&self) -> &str {
        self.role.as_deref().unwrap_or(DEFAULT_ROLE)
    }

    pub fn validate(&self) -> Result<Vec<Scope>, ClientError> {
        if self.experiment.is_empty() {
            return Err(ClientError::Usage("an experiment is required".into()));
        }
        self.scopes
            .iter()
            .map(|s| parse_scope(s).map_err(|e| ClientError::Usage(format!("scope {s}: {e}"))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Cached,
    Exchanged,
    Renewed,
    Bootstrapped,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cached => "cached",
            Source::Exchanged => "exchanged",
            Source::Renewed => "renewed",
            Source::Bootstrapped => "bootstrapped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub access_token: String,
    pub expires_at: i64,
    pub source: Source,
    pub layout: TokenFileLayout,
    pub written: Vec<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{0}")]
    Usage(String),
    #[error("authentication required: {0}")]
    AuthRequired(String),
    #[error("timed out after {0}s waiting for browser authentication")]
    ConsentTimeout(i64),
    #[error("{0}")]
    DownscopeRefused(String),
    #[error("network failure: {0}")]
    Network(String),
    #[error("broker refused: {0}")]
    Broker(BrokerError),
    #[error("bad secondary key {path}: {reason}")]
    SecondaryKey { path: PathBuf, reason: String },
    #[error(transparent)]
    Write(#[from] WriteError),
}

impl ClientError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::AuthRequired(_) | ClientError::ConsentTimeout(_) => 2,
            ClientError::DownscopeRefused(_) => 3,
            ClientError::Network(_) => 4,
            _ => 1,
        }
    }
}

impl From<BrokerError> for ClientError {
    fn from(e: BrokerError) -> Self {
        match e.code {
            ErrorCode::BrokerUnreachable | ErrorCode::IssuerUnreachable => {
                ClientError::Network(e.message)
            }
            ErrorCode::DownscopeRefused => {
                ClientError::DownscopeRefused(format!("downscope refused: {}", e.message))
            }
            ErrorCode::ConsentDenied | ErrorCode::SessionExpired | ErrorCode::BootstrapRequired => {
                ClientError::AuthRequired(e.message)
            }
            _ => ClientError::Broker(e),
        }
    }
}

/// How the user is shown the bootstrap URL, and how waiting happens.
#[async_trait]
pub trait Interaction: Send + Sync {
    fn show_url(&self, url: &str);
    async fn pause(&self, secs: u64);
}

pub struct Terminal {
    pub quiet: bool,
}

#[async_trait]
impl Interaction for Terminal {
    fn show_url(&self, url: &str) {
        eprintln!("Complete the authentication at:\n    {url}");
        if !self.quiet {
            eprintln!("Waiting for completion (up to {POLL_TIMEOUT}s)...");
        }
    }

    async fn pause(&self, secs: u64) {
        tokio::time::sleep(std::time::Duration::from_secs(secs)).await;
    }
}

pub struct TokenClient {
    api: Arc<dyn BrokerApi>,
    clock: SharedClock,
    interaction: Arc<dyn Interaction>,
    env: EnvVars,
    uid: u32,
    poll_interval: u64,
}

impl TokenClient {
    pub fn new(
        api: Arc<dyn BrokerApi>,
        clock: SharedClock,
        interaction: Arc<dyn Interaction>,
        env: EnvVars,
        uid: u32,
    ) -> Self {
        TokenClient {
            api,
            clock,
            interaction,
            env,
            uid,
            poll_interval: POLL_INTERVAL,
        }
    }

    pub fn with_poll_interval(mut self, secs: u64) -> Self {
        self.poll_interval = secs.max(1);
        self
    }

    pub fn layout(&self, opts: &ClientOptions) -> TokenFileLayout {
        TokenFileLayout::resolve(
            &self.env,
            self.uid,
            &opts.experiment,
            opts.role(),
            opts.credkey.as_deref(),
            opts.out.as_deref(),
        )
    }

    fn principal(&self, opts: &ClientOptions) -> String {
        opts.credkey
            .clone()
            .or_else(|| self.env.get("USER").map(str::to_string))
            .unwrap_or_else(|| format!("uid{}", self.uid))
    }

    fn exchange_options(opts: &ClientOptions) -> ExchangeOptions {
        ExchangeOptions {
            scopes: (!opts.scopes.is_empty()).then(|| opts.scopes.clone()),
            audience: opts.audience.clone(),
        }
    }

    /// Is a discovered token good enough for this request?
    fn usable(&self, token: &str, opts: &ClientOptions, wanted: &[Scope]) -> Option<i64> {
        let claims = peek_claims(token).ok()?;
        let now = self.clock.now();
        if claims.exp - now <= MIN_REMAINING || claims.nbf > now {
            return None;
        }
        if !claims.has_group(&experiment_group(&opts.experiment))
            || !claims.has_group(&role_group(&opts.experiment, opts.role()))
        {
            return None;
        }
        if !wanted.iter().all(|s| covered_by(&claims.scope, s)) {
            return None;
        }
        let aud = opts.audience.as_deref().unwrap_or(ANY_AUDIENCE);
        claims.aud.iter().any(|a| a == aud).then_some(claims.exp)
    }

    fn load_secondary_key(
        &self,
        opts: &ClientOptions,
    ) -> Result<Option<SecondaryKey>, ClientError> {
        let path = opts
            .secondary_key
            .clone()
            .or_else(|| self.env.get(GETTOKEN_SECONDARY_KEY).map(PathBuf::from));
        let Some(path) = path else { return Ok(None) };
        let text = std::fs::read_to_string(&path).map_err(|e| ClientError::SecondaryKey {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        SecondaryKey::from_seed_hex(&text)
            .map(Some)
            .map_err(|e| ClientError::SecondaryKey {
                path,
                reason: e.to_string(),
            })
    }

    pub async fn get_token(&self, opts: &ClientOptions) -> Result<Outcome, ClientError> {
        let wanted = opts.validate()?;
        let layout = self.layout(opts);

        if let Some(found) = discover_bearer(&self.env, self.uid).and_then(|s| s.read()) {
            if let Some(exp) = self.usable(&found, opts, &wanted) {
                let written = write_token_files(Some(&found), None, &layout)?;
                return Ok(Outcome {
                    access_token: found,
                    expires_at: exp,
                    source: Source::Cached,
                    layout,
                    written,
                });
            }
        }
        // --out may point somewhere discovery does not look
        if let Some(found) = opts
            .out
            .as_ref()
            .and_then(|p| std::fs::read_to_string(p).ok())
        {
            let found = found.trim();
            if let Some(exp) = self.usable(found, opts, &wanted) {
                return Ok(Outcome {
                    access_token: found.to_string(),
                    expires_at: exp,
                    source: Source::Cached,
                    layout,
                    written: Vec::new(),
                });
            }
        }

        if let Some(bt) = read_broker_token(&layout) {
            match self.api.exchange(&bt, Self::exchange_options(opts)).await {
                Ok(at) => {
                    return self.finish(
                        at.access_token,
                        at.expires_at,
                        None,
                        Source::Exchanged,
                        layout,
                    )
                }
                Err(e) if needs_new_broker_token(&e) => {}
                Err(e) => return Err(e.into()),
            }
        }

        if let Some(key) = self.load_secondary_key(opts)? {
            let req = RenewRequest {
                assertion: key.assert(&self.principal(opts), &opts.experiment, self.clock.now()),
                experiment: opts.experiment.clone(),
                role: opts.role().to_string(),
            };
            match self.api.renew(req).await {
                Ok(grant) => {
                    write_token_files(None, Some(&grant.token), &layout)?;
                    let at = self
                        .api
                        .exchange(&grant.token, Self::exchange_options(opts))
                        .await?;
                    return self.finish(
                        at.access_token,
                        at.expires_at,
                        Some(&grant.token),
                        Source::Renewed,
                        layout,
                    );
                }
                Err(e) if renewal_impossible(&e) => {}
                Err(e) => return Err(e.into()),
            }
        }

        if opts.no_oidc {
            return Err(ClientError::AuthRequired(format!(
                "no valid broker token for {}/{} and browser authentication is disabled",
                opts.experiment,
                opts.role()
            )));
        }
        self.bootstrap(opts, layout).await
    }

    async fn bootstrap(
        &self,
        opts: &ClientOptions,
        layout: TokenFileLayout,
    ) -> Result<Outcome, ClientError> {
        let session = self
            .api
            .begin(BeginRequest {
                principal: self.principal(opts),
                experiment: opts.experiment.clone(),
                role: opts.role().to_string(),
            })
            .await?;
        self.interaction.show_url(&session.url);
        let started = self.clock.now();
        loop {
            self.interaction.pause(self.poll_interval).await;
            match self.api.poll(&session.poll_handle).await? {
                PollResponse::Pending => {
                    if self.clock.now() - started >= POLL_TIMEOUT {
                        return Err(ClientError::ConsentTimeout(POLL_TIMEOUT));
                    }
                }
                PollResponse::Complete {
                    broker_token,
                    access_token,
                } => {
                    write_token_files(None, Some(&broker_token.token), &layout)?;
                    if opts.scopes.is_empty() && opts.audience.is_none() {
                        return self.finish(
                            access_token.access_token,
                            access_token.expires_at,
                            Some(&broker_token.token),
                            Source::Bootstrapped,
                            layout,
                        );
                    }
                    let at = self
                        .api
                        .exchange(&broker_token.token, Self::exchange_options(opts))
                        .await?;
                    return self.finish(
                        at.access_token,
                        at.expires_at,
                        Some(&broker_token.token),
                        Source::Bootstrapped,
                        layout,
                    );
                }
            }
        }
    }

    fn finish(
        &self,
        access_token: String,
        expires_at: i64,
        broker: Option<&SecretString>,
        source: Source,
        layout: TokenFileLayout,
    ) -> Result<Outcome, ClientError> {
        let mut written = Vec::new();
        if broker.is_some() {
            written.push(layout.broker.clone());
        }
        written.extend(write_token_files(Some(&access_token), None, &layout)?);
        Ok(Outcome {
            access_token,
            expires_at,
            source,
            layout,
            written,
        })
    }
}

fn needs_new_broker_token(e: &BrokerError) -> bool {
    matches!(
        e.code,
        ErrorCode::BrokerTokenExpired
            | ErrorCode::BrokerTokenUnknown
            | ErrorCode::BootstrapRequired
    )
}

fn renewal_impossible(e: &BrokerError) -> bool {
    matches!(
        e.code,
        ErrorCode::BootstrapRequired
            | ErrorCode::NotEnrolled
            | ErrorCode::StaleTimestamp
            | ErrorCode::BadSignature
    )
}
