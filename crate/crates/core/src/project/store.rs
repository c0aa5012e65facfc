//! On-disk layout of a project store.
//!
//! ```text
//! <root>/project.json
//! <root>/steps/<name>/state
//! <root>/steps/<name>/runs/<run_id>.json
//! <root>/events.jsonl
//! <root>/artifacts/<run_id>/
//! ```
//!
//! Every file except `events.jsonl` is replaced atomically (temp file + rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::types::{ProjectManifest, RunId, RunRecord, StepState};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store: {}{}: {reason}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Corrupt {
        path: PathBuf,
        line: Option<usize>,
        reason: String,
    },
    #[error("a project already exists at {}", .0.display())]
    AlreadyInitialized(PathBuf),
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(path: &Path, line: Option<usize>, reason: impl Into<String>) -> Self {
        StoreError::Corrupt {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }

    fn json(path: &Path, err: serde_json::Error) -> Self {
        Self::corrupt(path, Some(err.line()), err.to_string())
    }
}

pub const PROJECT_FILE: &str = "project.json";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_file(&self) -> PathBuf {
        self.root.join(PROJECT_FILE)
    }

    pub fn events_file(&self) -> PathBuf {
        self.root.join(EVENTS_FILE)
    }

    pub fn step_dir(&self, step: &str) -> PathBuf {
        self.root.join("steps").join(step)
    }

    pub fn state_file(&self, step: &str) -> PathBuf {
        self.step_dir(step).join("state")
    }

    pub fn runs_dir(&self, step: &str) -> PathBuf {
        self.step_dir(step).join("runs")
    }

    pub fn run_file(&self, step: &str, run_id: &RunId) -> PathBuf {
        self.runs_dir(step).join(format!("{run_id}.json"))
    }

    pub fn artifacts_dir(&self, run_id: &RunId) -> PathBuf {
        self.root.join("artifacts").join(run_id.as_str())
    }

    /// Base directory for relative watched-source paths: the store's parent.
    pub fn source_base(&self) -> PathBuf {
        let abs = std::path::absolute(&self.root).unwrap_or_else(|_| self.root.clone());
        abs.parent().map(Path::to_path_buf).unwrap_or(abs)
    }

    pub fn exists(&self) -> bool {
        self.project_file().is_file()
    }

    pub fn write_manifest(&self, manifest: &ProjectManifest) -> Result<(), StoreError> {
        let value = serde_json::to_value(manifest).expect("manifest is serializable");
        let mut text = serde_json::to_string_pretty(&value).expect("json value is serializable");
        text.push('\n');
        write_atomic(&self.project_file(), text.as_bytes())
    }

    pub fn read_manifest(&self) -> Result<ProjectManifest, StoreError> {
        let path = self.project_file();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::corrupt(&path, None, "missing project manifest"));
            }
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let mut manifest: ProjectManifest =
            serde_json::from_str(&text).map_err(|e| StoreError::json(&path, e))?;
        manifest.store_root = self.root.clone();
        Ok(manifest)
    }

    pub fn write_state(&self, step: &str, state: StepState) -> Result<(), StoreError> {
        write_atomic(&self.state_file(step), format!("{state}\n").as_bytes())
    }

    /// Missing state file means the step never ran.
    pub fn read_state(&self, step: &str) -> Result<StepState, StoreError> {
        let path = self.state_file(step);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let token = text.strip_suffix('\n').unwrap_or(&text);
                let state: StepState = token
                    .parse()
                    .map_err(|e: String| StoreError::corrupt(&path, Some(1), e))?;
                if state == StepState::Stale {
                    return Err(StoreError::corrupt(
                        &path,
                        Some(1),
                        "Stale is derived and cannot be persisted",
                    ));
                }
                Ok(state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(StepState::NotStarted),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }

    pub fn write_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        write_atomic(
            &self.run_file(&record.step_name, &record.run_id),
            record.to_json().as_bytes(),
        )
    }

    /// All runs of `step`, sorted by run id.
    pub fn read_runs(&self, step: &str) -> Result<Vec<RunRecord>, StoreError> {
        let dir = self.runs_dir(step);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&dir, e)),
        };
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| StoreError::io(&dir, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        paths
            .iter()
            .map(|path| {
                let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
                let record: RunRecord =
                    serde_json::from_str(&text).map_err(|e| StoreError::json(path, e))?;
                let expected = format!("{}.json", record.run_id);
                if path.file_name().and_then(|n| n.to_str()) != Some(expected.as_str())
                    || record.step_name != step
                {
                    return Err(StoreError::corrupt(
                        path,
                        None,
                        format!(
                            "record for run {} of step `{}` stored under the wrong path",
                            record.run_id, record.step_name
                        ),
                    ));
                }
                Ok(record)
            })
            .collect()
    }
}

/// Writes `bytes` to a temp file next to `path`, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::io(dir, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| StoreError::io(path, e))?;
    tmp.persist(path).map_err(|e| StoreError::io(path, e.error))?;
    Ok(())
}
