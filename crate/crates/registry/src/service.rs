//! Journal-backed registry: single writer, snapshot readers.
//!
//! Every accepted change is appended to `journal.jsonl` before it becomes
//! visible. `compact` folds the journal into `snapshot.json`.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use gridtoken_core::fsutil::write_private_atomic;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::export::{export_directory, generate_configs, DirectoryDocument, GeneratedConfig};
use crate::model::{apply_change, Change, RegistryError, RegistryState};

const JOURNAL: &str = "journal.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("journal i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt registry store: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    serial: u64,
    change: Change,
}

struct Journal {
    dir: PathBuf,
    file: File,
}

pub struct Registry {
    state: RwLock<Arc<RegistryState>>,
    writer: Mutex<Option<Journal>>,
    issuer_base: String,
}

impl Registry {
    pub fn in_memory(issuer_base: impl Into<String>) -> Self {
        Registry {
            state: RwLock::new(Arc::new(RegistryState::default())),
            writer: Mutex::new(None),
            issuer_base: issuer_base.into(),
        }
    }

    /// Load the snapshot (if any) and replay newer journal entries.
    pub fn open(dir: &Path, issuer_base: impl Into<String>) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        let mut state = match std::fs::read(dir.join(SNAPSHOT)) {
            Ok(bytes) => serde_json::from_slice::<RegistryState>(&bytes)
                .map_err(|e| ServiceError::Corrupt(format!("snapshot: {e}")))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => RegistryState::default(),
            Err(e) => return Err(e.into()),
        };
        let journal_path = dir.join(JOURNAL);
        if journal_path.exists() {
            for (lineno, line) in BufReader::new(File::open(&journal_path)?)
                .lines()
                .enumerate()
            {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = serde_json::from_str(&line).map_err(|e| {
                    ServiceError::Corrupt(format!("journal line {}: {e}", lineno + 1))
                })?;
                if entry.serial <= state.serial {
                    continue;
                }
                state = apply_change(&state, &entry.change)?;
                if state.serial != entry.serial {
                    return Err(ServiceError::Corrupt(format!(
                        "journal serial {} replayed as {}",
                        entry.serial, state.serial
                    )));
                }
            }
        }
        state.check_invariants().map_err(ServiceError::Corrupt)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)?;
        Ok(Registry {
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Some(Journal {
                dir: dir.to_path_buf(),
                file,
            })),
            issuer_base: issuer_base.into(),
        })
    }

    pub fn snapshot(&self) -> Arc<RegistryState> {
        self.state.read().expect("registry lock").clone()
    }

    pub fn issuer_base(&self) -> &str {
        &self.issuer_base
    }

    /// Apply a change and return the new serial.
    pub fn apply(&self, change: &Change) -> Result<u64, ServiceError> {
        let mut writer = self.writer.lock().expect("registry writer lock");
        let current = self.snapshot();
        let next = apply_change(&current, change)?;
        if let Some(journal) = writer.as_mut() {
            let mut line = serde_json::to_string(&JournalEntry {
                serial: next.serial,
                change: change.clone(),
            })
            .expect("change serializes");
            line.push('\n');
            journal.file.write_all(line.as_bytes())?;
            journal.file.sync_data()?;
        }
        let serial = next.serial;
        *self.state.write().expect("registry lock") = Arc::new(next);
        Ok(serial)
    }

    pub fn directory(&self) -> DirectoryDocument {
        export_directory(&self.snapshot())
    }

    pub fn configs(&self) -> GeneratedConfig {
        generate_configs(&self.snapshot(), &self.issuer_base)
    }

    /// Write a snapshot and start an empty journal.
    pub fn compact(&self) -> Result<(), ServiceError> {
        let mut writer = self.writer.lock().expect("registry writer lock");
        let Some(journal) = writer.as_mut() else {
            return Ok(());
        };
        let state = self.snapshot();
        let bytes = serde_json::to_vec(&*state).expect("state serializes");
        write_private_atomic(&journal.dir.join(SNAPSHOT), &bytes)?;
        journal.file = File::create(journal.dir.join(JOURNAL))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn changes() -> Vec<Change> {
        vec![
            Change::AddExperiment {
                name: "nova".into(),
                dedicated_issuer: false,
                storage_prefix: None,
            },
            Change::SetRoleScopes {
                experiment: "nova".into(),
                role: "analysis".into(),
                scopes: vec!["storage.read:/nova".into()],
            },
            Change::AddUser {
                id: "carol".into(),
                display_name: "Carol".into(),
            },
            Change::AssignRole {
                user: "carol".into(),
                experiment: "nova".into(),
                role: "analysis".into(),
            },
        ]
    }

    #[test]
    fn reopen_replays_journal() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path(), "https://issuer.test").unwrap();
        for c in changes() {
            reg.apply(&c).unwrap();
        }
        assert!(reg.apply(&changes()[0]).is_err());
        let before = reg.snapshot();
        drop(reg);
        let reg = Registry::open(dir.path(), "https://issuer.test").unwrap();
        assert_eq!(*reg.snapshot(), *before);
    }

    #[test]
    fn compact_then_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path(), "https://issuer.test").unwrap();
        let cs = changes();
        reg.apply(&cs[0]).unwrap();
        reg.apply(&cs[1]).unwrap();
        reg.compact().unwrap();
        reg.apply(&cs[2]).unwrap();
        reg.apply(&cs[3]).unwrap();
        let before = reg.snapshot();
        drop(reg);
        let reg = Registry::open(dir.path(), "https://issuer.test").unwrap();
        assert_eq!(*reg.snapshot(), *before);
        assert_eq!(reg.snapshot().serial, 4);
    }

    #[test]
    fn corrupt_journal_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(JOURNAL), "{not json\n").unwrap();
        assert!(matches!(
            Registry::open(dir.path(), "x"),
            Err(ServiceError::Corrupt(_))
        ));
    }
}
