//! Staged model development: an ordered list of steps, each gated by boolean
//! checks over uniformly registered metrics, with a persistent run store,
//! source-fingerprint staleness, decorators and a deterministic reference
//! training backend that makes the built-in recipe steps executable.

pub mod backend;
pub mod checks;
pub mod metrics;
pub mod project;
pub mod recipe;
pub mod rng;
pub mod tracking;

pub use checks::{evaluate_check, CheckOutcome, CheckSpec, RunHistory};
pub use metrics::{
    compare_runs, Direction, MetricDef, MetricRegistry, MetricStage, MetricValue, StageScope,
};
pub use project::{
    ExecutorSource, Executors, Project, ProjectError, ProjectManifest, RunId, RunOptions,
    RunRecord, Scalar, StepContext, StepDescriptor, StepExecutor, StepKind, StepState,
    WatchedSource,
};
pub use tracking::{Fingerprint, LogEvent};
