//! Where token files go, and how they are written.

use std::io;
use std::path::{Path, PathBuf};

use gridtoken_core::fsutil::write_private_atomic;
use gridtoken_core::secret::SecretString;

use crate::discovery::{
    token_file_name, EnvVars, BEARER_TOKEN_FILE, GETTOKEN_CREDDIR, XDG_RUNTIME_DIR,
};

/// The role used when none is requested; it is left out of file names.
pub const DEFAULT_ROLE: &str = "analysis";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFileLayout {
    pub access: PathBuf,
    pub broker: PathBuf,
}

pub fn broker_token_file_name(
    uid: u32,
    experiment: &str,
    role: &str,
    credkey: Option<&str>,
) -> String {
    let mut name = format!("vt_u{uid}-{experiment}");
    if role != DEFAULT_ROLE {
        name.push('-');
        name.push_str(role);
    }
    if let Some(k) = credkey {
        name.push('-');
        name.push_str(k);
    }
    name
}

impl TokenFileLayout {
    /// Access token: `out`, else `$BEARER_TOKEN_FILE`, else
    /// `$XDG_RUNTIME_DIR/bt_u{uid}`, else `$TMPDIR/bt_u{uid}`.
    /// Broker token: `vt_u{uid}-{experiment}[-{role}][-{credkey}]` under
    /// `$GETTOKEN_CREDDIR`, else the temp directory.
    pub fn resolve(
        env: &EnvVars,
        uid: u32,
        experiment: &str,
        role: &str,
        credkey: Option<&str>,
        out: Option<&Path>,
    ) -> Self {
        let access = match (out, env.get(BEARER_TOKEN_FILE), env.get(XDG_RUNTIME_DIR)) {
            (Some(p), _, _) => p.to_path_buf(),
            (None, Some(p), _) => PathBuf::from(p),
            (None, None, Some(dir)) => Path::new(dir).join(token_file_name(uid)),
            (None, None, None) => env.temp_dir().join(token_file_name(uid)),
        };
        let dir = env
            .get(GETTOKEN_CREDDIR)
            .map(PathBuf::from)
            .unwrap_or_else(|| env.temp_dir());
        TokenFileLayout {
            access,
            broker: dir.join(broker_token_file_name(uid, experiment, role, credkey)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error("access and broker tokens would share {0}")]
    SamePath(PathBuf),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), WriteError> {
    let wrap = |source| WriteError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.exists() {
            std::fs::create_dir_all(parent).map_err(wrap)?;
        }
    }
    write_private_atomic(path, bytes).map_err(wrap)
}

/// Write whichever tokens are given. The access-token file holds the
/// compact token and a newline; a file already holding the same bytes is
/// left alone.
pub fn write_token_files(
    access: Option<&str>,
    broker: Option<&SecretString>,
    layout: &TokenFileLayout,
) -> Result<Vec<PathBuf>, WriteError> {
    if layout.access == layout.broker {
        return Err(WriteError::SamePath(layout.access.clone()));
    }
    let mut written = Vec::new();
    if let Some(b) = broker {
        let bytes = format!("{}\n", b.expose());
        if std::fs::read(&layout.broker).ok().as_deref() != Some(bytes.as_bytes()) {
            write(&layout.broker, bytes.as_bytes())?;
            written.push(layout.broker.clone());
        }
    }
    if let Some(a) = access {
        let bytes = format!("{a}\n");
        if std::fs::read(&layout.access).ok().as_deref() != Some(bytes.as_bytes()) {
            write(&layout.access, bytes.as_bytes())?;
            written.push(layout.access.clone());
        }
    }
    Ok(written)
}

pub fn read_broker_token(layout: &TokenFileLayout) -> Option<SecretString> {
    let text = std::fs::read_to_string(&layout.broker).ok()?;
    let t = text.trim();
    (!t.is_empty()).then(|| SecretString::new(t))
}
