//! Run persistence: an append-only manifest of everything a run did (digests,
//! job ids, checkpoints, stage completions, failures), plus the run-directory
//! conventions — naming, locking, and atomic file writes — that make
//! interrupted runs resumable.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{JobHandle, ModelId};
use crate::evaluation::Arm;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Seconds since the Unix epoch; the only clock the manifest uses.
pub fn epoch_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Errors from manifest and run-directory handling.
#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("run directory {path} is owned by another process (stale? remove {lock})")]
    Locked { path: String, lock: String },
    #[error("manifest digest mismatch for {what}: recorded {recorded}, recomputed {recomputed}")]
    DigestMismatch {
        what: String,
        recorded: String,
        recomputed: String,
    },
}

/// One manifest entry. Events are only ever appended; a run's history is the
/// full sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ManifestEvent {
    RunStarted {
        command: String,
        config_digest: String,
        seed: u64,
    },
    /// A dataset file landed on disk.
    DatasetBuilt {
        stage: String,
        path: String,
        digest: String,
        records: usize,
    },
    FinetuneSubmitted {
        arm: Arm,
        iteration: usize,
        job: JobHandle,
        base_model: ModelId,
        dataset_digest: String,
    },
    /// A finetune finished and its output model is known.
    CheckpointRecorded {
        arm: Arm,
        iteration: usize,
        model: ModelId,
        job: Option<JobHandle>,
        dataset_digest: Option<String>,
    },
    /// A record file landed on disk.
    RecordsWritten {
        stage: String,
        path: String,
        count: usize,
    },
    /// The named stage finished; resume skips completed stages.
    StageCompleted {
        stage: String,
    },
    Failure {
        stage: String,
        detail: String,
    },
}

/// A manifest entry with its wall-clock timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampedEvent {
    pub at: u64,
    #[serde(flatten)]
    pub event: ManifestEvent,
}

/// Manifest file name inside a run directory.
pub const MANIFEST_FILE: &str = "manifest.jsonl";
const LOCK_FILE: &str = ".lock";

/// Append-only writer over `manifest.jsonl` in a run directory.
pub struct RunManifest {
    file: Mutex<File>,
}

impl RunManifest {
    /// Opens (creating if needed) the manifest for appending.
    pub fn open(run_dir: &Path) -> Result<RunManifest, ManifestError> {
        let path = run_dir.join(MANIFEST_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| ManifestError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(RunManifest {
            file: Mutex::new(file),
        })
    }

    /// Appends one event, flushed immediately so a crash loses at most the
    /// event in flight.
    pub fn append(&self, event: ManifestEvent) -> Result<(), ManifestError> {
        let entry = TimestampedEvent {
            at: epoch_seconds(),
            event,
        };
        let line = serde_json::to_string(&entry).expect("manifest events serialize");
        let mut file = self.file.lock().expect("manifest lock");
        writeln!(file, "{line}")
            .and_then(|()| file.flush())
            .map_err(|source| ManifestError::Io {
                path: MANIFEST_FILE.to_string(),
                source,
            })
    }
}

/// A loaded manifest with the queries resume logic needs.
#[derive(Debug, Clone, Default)]
pub struct ManifestLog {
    pub events: Vec<TimestampedEvent>,
}

impl ManifestLog {
    /// Loads a run directory's manifest; a missing file is an empty history.
    pub fn load(run_dir: &Path) -> Result<ManifestLog, ManifestError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ManifestLog::default()),
            Err(source) => {
                return Err(ManifestError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let mut events = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TimestampedEvent =
                serde_json::from_str(line).map_err(|e| ManifestError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    detail: e.to_string(),
                })?;
            events.push(entry);
        }
        Ok(ManifestLog { events })
    }

    pub fn stage_completed(&self, stage: &str) -> bool {
        self.events
            .iter()
            .any(|e| matches!(&e.event, ManifestEvent::StageCompleted { stage: s } if s == stage))
    }

    /// Latest recorded checkpoint model for (arm, iteration), if any.
    pub fn checkpoint(&self, arm: Arm, iteration: usize) -> Option<&ModelId> {
        self.events.iter().rev().find_map(|e| match &e.event {
            ManifestEvent::CheckpointRecorded {
                arm: a,
                iteration: i,
                model,
                ..
            } if *a == arm && *i == iteration => Some(model),
            _ => None,
        })
    }

    /// Dataset digest recorded alongside a checkpoint, for drift detection on
    /// resume.
    pub fn checkpoint_dataset_digest(&self, arm: Arm, iteration: usize) -> Option<&str> {
        self.events.iter().rev().find_map(|e| match &e.event {
            ManifestEvent::CheckpointRecorded {
                arm: a,
                iteration: i,
                dataset_digest,
                ..
            } if *a == arm && *i == iteration => dataset_digest.as_deref(),
            _ => None,
        })
    }

    /// Digest recorded for a dataset stage, if the stage wrote one.
    pub fn dataset_digest(&self, stage: &str) -> Option<&str> {
        self.events.iter().rev().find_map(|e| match &e.event {
            ManifestEvent::DatasetBuilt {
                stage: s, digest, ..
            } if s == stage => Some(digest.as_str()),
            _ => None,
        })
    }

    pub fn failures(&self) -> Vec<(&str, &str)> {
        self.events
            .iter()
            .filter_map(|e| match &e.event {
                ManifestEvent::Failure { stage, detail } => Some((stage.as_str(), detail.as_str())),
                _ => None,
            })
            .collect()
    }
}

/// Exclusive ownership of a run directory, held for the process lifetime via
/// a lock file that is removed on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock, ManifestError> {
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(ManifestError::Locked {
                path: run_dir.display().to_string(),
                lock: path.display().to_string(),
            }),
            Err(source) => Err(ManifestError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Canonical run-directory name: start time plus a config-digest prefix, so
/// directories sort chronologically and identify their configuration.
pub fn run_dir_name(config_digest: &str, started_at: u64) -> String {
    let prefix: String = config_digest.chars().take(8).collect();
    format!("{started_at}-{prefix}")
}

/// Writes a file via a temporary sibling and rename, so readers never observe
/// a half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ManifestError> {
    let tmp = path.with_extension("tmp");
    let io_err = |source: std::io::Error| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::write(&tmp, contents).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Writes records as one JSON object per line (atomically).
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ManifestError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("records serialize"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a JSONL record file written by [`write_jsonl`].
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_the_known_test_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_hex(b"").len(), 64);
    }

    #[test]
    fn manifest_round_trips_and_answers_queries() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::open(dir.path()).unwrap();
        manifest
            .append(ManifestEvent::RunStarted {
                command: "run-exp2".into(),
                config_digest: "deadbeef".into(),
                seed: 7,
            })
            .unwrap();
        manifest
            .append(ManifestEvent::CheckpointRecorded {
                arm: Arm::Treatment,
                iteration: 0,
                model: ModelId::new("base+decl:12345678"),
                job: None,
                dataset_digest: None,
            })
            .unwrap();
        manifest
            .append(ManifestEvent::CheckpointRecorded {
                arm: Arm::Treatment,
                iteration: 1,
                model: ModelId::new("base+decl:12345678+it:aaaaaaaa"),
                job: Some(JobHandle::new("scripted-job-0001")),
                dataset_digest: Some("ffff".into()),
            })
            .unwrap();
        manifest
            .append(ManifestEvent::StageCompleted {
                stage: "exp2:chain:treatment".into(),
            })
            .unwrap();
        drop(manifest);

        let log = ManifestLog::load(dir.path()).unwrap();
        assert_eq!(log.events.len(), 4);
        assert!(log.stage_completed("exp2:chain:treatment"));
        assert!(!log.stage_completed("exp2:chain:control"));
        assert_eq!(
            log.checkpoint(Arm::Treatment, 1).unwrap().as_str(),
            "base+decl:12345678+it:aaaaaaaa"
        );
        assert!(log.checkpoint(Arm::Control, 0).is_none());
        assert_eq!(
            log.checkpoint_dataset_digest(Arm::Treatment, 1),
            Some("ffff")
        );
    }

    #[test]
    fn later_events_shadow_earlier_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::open(dir.path()).unwrap();
        for model in ["first", "second"] {
            manifest
                .append(ManifestEvent::CheckpointRecorded {
                    arm: Arm::Control,
                    iteration: 2,
                    model: ModelId::new(model),
                    job: None,
                    dataset_digest: None,
                })
                .unwrap();
        }
        let log = ManifestLog::load(dir.path()).unwrap();
        assert_eq!(log.checkpoint(Arm::Control, 2).unwrap().as_str(), "second");
    }

    #[test]
    fn missing_manifest_is_an_empty_history() {
        let dir = tempfile::tempdir().unwrap();
        let log = ManifestLog::load(dir.path()).unwrap();
        assert!(log.events.is_empty());
        assert!(!log.stage_completed("anything"));
    }

    #[test]
    fn corrupt_manifest_lines_name_their_position() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "not json\n").unwrap();
        match ManifestLog::load(dir.path()) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn run_lock_is_exclusive_until_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            RunLock::acquire(dir.path()),
            Err(ManifestError::Locked { .. })
        ));
        drop(lock);
        let relock = RunLock::acquire(dir.path());
        assert!(relock.is_ok());
    }

    #[test]
    fn run_dir_names_sort_by_time_and_carry_the_digest() {
        let name = run_dir_name("0123456789abcdef", 1_700_000_000);
        assert_eq!(name, "1700000000-01234567");
    }

    #[test]
    fn atomic_writes_replace_content_without_tmp_leftovers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_atomic(&path, b"first\n").unwrap();
        write_atomic(&path, b"second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second\n");
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn jsonl_round_trips_records() {
        #[derive(Debug, PartialEq, Serialize, Deserialize)]
        struct Row {
            id: usize,
            text: String,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![
            Row {
                id: 0,
                text: "first".into(),
            },
            Row {
                id: 1,
                text: "second".into(),
            },
        ];
        write_jsonl(&path, &rows).unwrap();
        let back: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(back, rows);

        std::fs::write(&path, "{\"id\":0,\"text\":\"ok\"}\nbroken\n").unwrap();
        match read_jsonl::<Row>(&path) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn failures_are_listed_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::open(dir.path()).unwrap();
        manifest
            .append(ManifestEvent::Failure {
                stage: "exp2:chain:treatment".into(),
                detail: "injected".into(),
            })
            .unwrap();
        let log = ManifestLog::load(dir.path()).unwrap();
        assert_eq!(log.failures(), vec![("exp2:chain:treatment", "injected")]);
    }
}
