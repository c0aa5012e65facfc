//! Source fingerprints and staleness, structured event logging, and decorators.

pub mod decorators;
pub mod events;
pub mod fingerprint;
pub mod staleness;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use decorators::{wrap_stage, BatchSaver, Decorator, Identity, Timer};
pub use events::{EventLog, Level, LogEvent, Logger, NoopLogger};
pub use fingerprint::{fingerprint_sources, Fingerprint};
pub use staleness::{mark_staleness, StepSnapshot};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("duplicate watched-source label `{0}`")]
    DuplicateLabel(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: malformed event: {reason}", path.display())]
    MalformedEvent {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl TrackingError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrackingError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
