//! Structured event logging. The filesystem logger appends one JSON object per
//! line to `events.jsonl`; remote trackers plug in through [`Logger`].

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::TrackingError;
use crate::project::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub timestamp: DateTime<Utc>,
    pub level: Level,
    /// Empty for project-level events.
    #[serde(default)]
    pub step: String,
    #[serde(default)]
    pub run_id: String,
    pub message: String,
    #[serde(default)]
    pub data: BTreeMap<String, Scalar>,
}

impl LogEvent {
    pub fn new(level: Level, message: impl Into<String>) -> Self {
        Self {
            timestamp: Utc::now(),
            level,
            step: String::new(),
            run_id: String::new(),
            message: message.into(),
            data: BTreeMap::new(),
        }
    }

    pub fn info(message: impl Into<String>) -> Self {
        Self::new(Level::Info, message)
    }

    pub fn step(mut self, step: &str) -> Self {
        self.step = step.to_string();
        self
    }

    pub fn run(mut self, run_id: &str) -> Self {
        self.run_id = run_id.to_string();
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Scalar>) -> Self {
        self.data.insert(key.to_string(), value.into());
        self
    }

    /// One line of JSON with sorted keys, no trailing newline.
    pub fn to_line(&self) -> String {
        let value = serde_json::to_value(self).expect("event is serializable");
        serde_json::to_string(&value).expect("json value is serializable")
    }

    pub fn from_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

/// Sink for experiment events.
pub trait Logger {
    fn log(&mut self, event: &LogEvent) -> Result<(), TrackingError>;
}

/// Stand-in for remote experiment trackers; discards everything.
#[derive(Debug, Default)]
pub struct NoopLogger;

impl Logger for NoopLogger {
    fn log(&mut self, _event: &LogEvent) -> Result<(), TrackingError> {
        Ok(())
    }
}

/// Append-only JSONL file. Each event is written and flushed before `log` returns.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, TrackingError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| TrackingError::io(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append_event(&mut self, event: &LogEvent) -> Result<(), TrackingError> {
        let mut line = event.to_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| TrackingError::io(&self.path, e))
    }

    /// Parses every line of an events file.
    pub fn read_all(path: &Path) -> Result<Vec<LogEvent>, TrackingError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(TrackingError::io(path, e)),
        };
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                LogEvent::from_line(line).map_err(|e| TrackingError::MalformedEvent {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}

impl Logger for EventLog {
    fn log(&mut self, event: &LogEvent) -> Result<(), TrackingError> {
        self.append_event(event)
    }
}
