//! File-backed session store.
//!
//! One pretty-printed JSON document per session, `<id>.json`, in a single
//! directory. Writes go to a temporary file in the same directory and are
//! renamed into place, so a reader never sees a half-written record.
//! Annotations are appended to `annotations.jsonl` in the same directory.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;
use uuid::Uuid;

use crate::evaluation::{parse_annotations, to_jsonl, AnnotationRecord};
use crate::pipeline::{Session, Stage};

pub const SCHEMA_VERSION: u32 = 1;
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(Uuid),
    #[error("record has schema version {found}, this build reads up to {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("serialization error: {0}")]
    SerializationError(String),
    #[error("storage full: {0}")]
    StorageFull(io::Error),
    #[error("storage error: {0}")]
    Io(#[from] io::Error),
}

fn io_error(e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::StorageFull {
        StoreError::StorageFull(e)
    } else {
        StoreError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSession {
    pub schema_version: u32,
    pub session: Session,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: Uuid,
    pub task_name: String,
    pub stage: Stage,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default)]
pub struct SessionFilter {
    pub task: Option<String>,
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

/// Only the version field, read before committing to the full schema.
#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

impl FileStore {
    /// Opens `root`, creating it if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_error)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, id: Uuid) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let mut tmp = NamedTempFile::new_in(&self.root).map_err(io_error)?;
        tmp.write_all(bytes).map_err(io_error)?;
        tmp.as_file().sync_all().map_err(io_error)?;
        tmp.persist(path).map_err(|e| io_error(e.error))?;
        Ok(())
    }

    /// Persists `session`, replacing any earlier version with the same id.
    pub fn save(&self, session: &Session) -> Result<Uuid, StoreError> {
        session.validate().map_err(StoreError::SerializationError)?;
        let now = Utc::now();
        let (created_at, updated_at) = match self.load(session.id) {
            Ok(prev) => (prev.created_at, now.max(prev.updated_at + Duration::microseconds(1))),
            Err(StoreError::NotFound(_)) => (now, now),
            Err(e) => return Err(e),
        };
        let record = StoredSession {
            schema_version: SCHEMA_VERSION,
            session: session.clone(),
            created_at,
            updated_at,
        };
        let bytes = serde_json::to_vec_pretty(&record).map_err(|e| StoreError::SerializationError(e.to_string()))?;
        self.write_atomic(&self.path_for(session.id), &bytes)?;
        Ok(session.id)
    }

    pub fn load(&self, id: Uuid) -> Result<StoredSession, StoreError> {
        let text = match fs::read_to_string(self.path_for(id)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id)),
            Err(e) => return Err(io_error(e)),
        };
        parse_record(&text)
    }

    pub fn list_sessions(&self, filter: &SessionFilter) -> Result<Vec<SessionSummary>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_error)? {
            let path = entry.map_err(io_error)?.path();
            let is_session = path.extension().is_some_and(|e| e == "json")
                && path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| Uuid::parse_str(s).is_ok());
            if !is_session {
                continue;
            }
            // Unreadable or foreign records are skipped rather than failing the listing.
            let Ok(record) = fs::read_to_string(&path)
                .map_err(io_error)
                .and_then(|t| parse_record(&t))
            else {
                continue;
            };
            let s = &record.session;
            if filter.task.as_deref().is_some_and(|t| t != s.task_name) || filter.stage.is_some_and(|st| st != s.stage)
            {
                continue;
            }
            out.push(SessionSummary {
                id: s.id,
                task_name: s.task_name.clone(),
                stage: s.stage,
                updated_at: record.updated_at,
            });
        }
        out.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then(a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn append_annotations(&self, records: &[AnnotationRecord]) -> Result<(), StoreError> {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(ANNOTATIONS_FILE))
            .map_err(io_error)?;
        file.write_all(to_jsonl(records).as_bytes()).map_err(io_error)?;
        file.sync_all().map_err(io_error)
    }

    pub fn load_annotations(&self) -> Result<Vec<AnnotationRecord>, StoreError> {
        match fs::read_to_string(self.root.join(ANNOTATIONS_FILE)) {
            Ok(text) => parse_annotations(&text).map_err(|e| StoreError::SerializationError(e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(io_error(e)),
        }
    }
}

fn parse_record(text: &str) -> Result<StoredSession, StoreError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| StoreError::SerializationError(e.to_string()))?;
    if probe.schema_version > SCHEMA_VERSION {
        return Err(StoreError::VersionMismatch {
            found: probe.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let record: StoredSession =
        serde_json::from_str(text).map_err(|e| StoreError::SerializationError(e.to_string()))?;
    record.session.validate().map_err(StoreError::SerializationError)?;
    Ok(record)
}
