//! Putting a broker-token file onto a robot's node.
//!
//! [`LocalDirTransport`] treats `root/<node>` as the node's filesystem. A
//! remote implementation (rsync or scp over ssh) plugs in by implementing
//! [`PushTransport`] with the same all-or-nothing contract: write to a
//! temporary name on the node, then rename.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use gridtoken_core::fsutil::write_private_atomic_with;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PushError {
    #[error("node {node} unreachable: {reason}")]
    Unreachable { node: String, reason: String },
    #[error("permission denied writing {}", path.display())]
    Permission { path: PathBuf },
    #[error("invalid destination {}", path.display())]
    InvalidPath { path: PathBuf },
    #[error("writing {} failed: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PushError {
    pub fn retriable(&self) -> bool {
        matches!(self, PushError::Unreachable { .. } | PushError::Io { .. })
    }
}

#[async_trait]
pub trait PushTransport: Send + Sync {
    /// Place `bytes` at `path` on `node`, owner-only. On error the previous
    /// content is left as it was.
    async fn push(&self, node: &str, path: &Path, bytes: &[u8]) -> Result<(), PushError>;
}

type Hook = Arc<dyn Fn(&str, &Path) -> std::io::Result<()> + Send + Sync>;

pub struct LocalDirTransport {
    root: PathBuf,
    before_rename: Option<Hook>,
}

impl LocalDirTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LocalDirTransport {
            root: root.into(),
            before_rename: None,
        }
    }

    /// Run `hook` between writing the temp file and renaming it into place;
    /// an error aborts the push.
    pub fn with_before_rename(
        mut self,
        hook: impl Fn(&str, &Path) -> std::io::Result<()> + Send + Sync + 'static,
    ) -> Self {
        self.before_rename = Some(Arc::new(hook));
        self
    }

    pub fn node_dir(&self, node: &str) -> PathBuf {
        self.root.join(node)
    }

    /// Where `path` on `node` lives locally.
    pub fn resolve(&self, node: &str, path: &Path) -> PathBuf {
        self.node_dir(node)
            .join(path.strip_prefix("/").unwrap_or(path))
    }
}

#[async_trait]
impl PushTransport for LocalDirTransport {
    async fn push(&self, node: &str, path: &Path, bytes: &[u8]) -> Result<(), PushError> {
        if !self.node_dir(node).is_dir() {
            return Err(PushError::Unreachable {
                node: node.into(),
                reason: "no such node".into(),
            });
        }
        if path
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Err(PushError::InvalidPath { path: path.into() });
        }
        let target = self.resolve(node, path);
        let classify = |source: std::io::Error| match source.kind() {
            std::io::ErrorKind::PermissionDenied => PushError::Permission { path: path.into() },
            _ => PushError::Io {
                path: path.into(),
                source,
            },
        };
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(classify)?;
        }
        let hook = self.before_rename.clone();
        write_private_atomic_with(&target, bytes, || match &hook {
            Some(h) => h(node, path),
            None => Ok(()),
        })
        .map_err(classify)
    }
}
