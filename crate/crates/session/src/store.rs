//! Append-only JSON-lines event log. Sessions are rebuilt by replaying it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SessionError};
use crate::model::{SessionConfig, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        session: String,
        config: SessionConfig,
        at_ms: u64,
    },
    Trial {
        session: String,
        #[serde(flatten)]
        trial: TrialRecord,
    },
}

#[derive(Serialize, Deserialize)]
struct Line {
    v: u32,
    #[serde(flatten)]
    event: Event,
}

/// Durable event log. `None` keeps everything in memory.
#[derive(Debug, Default)]
pub struct EventStore {
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl EventStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) the log at `path` and returns it with the
    /// events already recorded there.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Event>)> {
        let path = path.as_ref().to_path_buf();
        let events = if path.exists() {
            read_events(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((
            Self {
                file: Some(Mutex::new(file)),
                path: Some(path),
            },
            events,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes one event and syncs it to disk before returning.
    pub fn append(&self, event: &Event) -> Result<()> {
        let Some(file) = &self.file else {
            return Ok(());
        };
        let mut line = serde_json::to_vec(&Line {
            v: crate::model::SCHEMA_VERSION,
            event: event.clone(),
        })
        .map_err(|e| SessionError::Store(e.into()))?;
        line.push(b'\n');
        let mut f = file.lock();
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| SessionError::Corrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if parsed.v != crate::model::SCHEMA_VERSION {
            return Err(SessionError::Corrupt {
                line: i + 1,
                reason: format!("unsupported schema version {}", parsed.v),
            });
        }
        events.push(parsed.event);
    }
    Ok(events)
}
