//! Project container: ordered steps, gated execution and the persistent run store.
//!
//! A step may only run once every earlier step is `Passed` (a `Stale` step does
//! not count). Each run is written atomically as one JSON file before the step's
//! state file is updated, so an interrupted store never loses completed runs.

pub mod store;
mod types;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::Utc;
use thiserror::Error;

use crate::checks::{evaluate_check, CheckError, CheckOutcome, RunHistory};
use crate::metrics::{MetricError, MetricRegistry, MetricSink, MetricValue};
use crate::tracking::{
    fingerprint_sources, mark_staleness, Decorator, EventLog, Fingerprint, Level, LogEvent,
    Logger, StepSnapshot, TrackingError,
};

pub use store::{Store, StoreError};
pub use types::{
    Config, ProjectManifest, RunId, RunRecord, Scalar, SourceRef, StepDescriptor, StepKind,
    StepState, WatchedSource,
};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("step `{0}` is already registered")]
    DuplicateStepName(String),
    #[error("step `{0}` has no checks")]
    EmptyCheckList(String),
    #[error("invalid step name `{0}`: use letters, digits, `_`, `-` or `.`")]
    InvalidStepName(String),
    #[error("unknown step `{0}`")]
    UnknownStep(String),
    #[error("cannot run `{step}`: earlier step `{blocking}` is {state}, not Passed")]
    GateViolation {
        step: String,
        blocking: String,
        state: StepState,
    },
    #[error("no executor available for step `{0}`")]
    NoExecutor(String),
    #[error("step `{step}`: {source}")]
    InvalidCheck {
        step: String,
        #[source]
        source: CheckError,
    },
    #[error("watched source `{label}` of step `{step}`: {source}")]
    Source {
        step: String,
        label: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Baseline metrics produced inside a run (for example a from-scratch
/// comparison) that checks may reference under `step` as if it were a passed run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReferenceRun {
    pub step: String,
    pub metrics: BTreeMap<String, f64>,
}

/// Everything an executor may see or touch during one run.
pub struct StepContext<'a> {
    descriptor: &'a StepDescriptor,
    run_id: &'a RunId,
    seed: u64,
    registry: &'a MetricRegistry,
    history: &'a dyn RunHistory,
    artifacts_dir: PathBuf,
    metrics: MetricSink<'a>,
    decorators: Vec<Box<dyn Decorator>>,
    references: Vec<ReferenceRun>,
}

impl<'a> StepContext<'a> {
    pub fn descriptor(&self) -> &StepDescriptor {
        self.descriptor
    }

    pub fn config(&self) -> &Config {
        &self.descriptor.config
    }

    pub fn run_id(&self) -> &RunId {
        self.run_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn registry(&self) -> &MetricRegistry {
        self.registry
    }

    pub fn history(&self) -> &dyn RunHistory {
        self.history
    }

    /// `artifacts/<run_id>/`, created on first call.
    pub fn artifacts_dir(&self) -> std::io::Result<&Path> {
        std::fs::create_dir_all(&self.artifacts_dir)?;
        Ok(&self.artifacts_dir)
    }

    pub fn record(&mut self, value: MetricValue) -> Result<(), MetricError> {
        self.metrics.record(value)
    }

    pub fn record_all(
        &mut self,
        values: impl IntoIterator<Item = MetricValue>,
    ) -> Result<(), MetricError> {
        self.metrics.record_all(values)
    }

    pub fn recorded(&self, key: &str) -> Option<f64> {
        self.metrics.get(key)
    }

    pub fn decorators_mut(&mut self) -> &mut [Box<dyn Decorator>] {
        &mut self.decorators
    }

    pub fn add_reference_run(&mut self, step: impl Into<String>, metrics: BTreeMap<String, f64>) {
        self.references.push(ReferenceRun {
            step: step.into(),
            metrics,
        });
    }
}

/// Executes one step, recording metrics into the context.
pub trait StepExecutor {
    fn execute(&mut self, ctx: &mut StepContext<'_>) -> anyhow::Result<()>;
}

impl<F> StepExecutor for F
where
    F: FnMut(&mut StepContext<'_>) -> anyhow::Result<()>,
{
    fn execute(&mut self, ctx: &mut StepContext<'_>) -> anyhow::Result<()> {
        self(ctx)
    }
}

/// Looks up the executor for a step during `run_until`.
pub trait ExecutorSource {
    fn executor_for(&mut self, step: &StepDescriptor) -> Option<&mut dyn StepExecutor>;
}

/// Executors keyed by step name.
#[derive(Default)]
pub struct Executors {
    by_step: HashMap<String, Box<dyn StepExecutor>>,
}

impl Executors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, step: impl Into<String>, executor: impl StepExecutor + 'static) {
        self.by_step.insert(step.into(), Box::new(executor));
    }

    pub fn insert_boxed(&mut self, step: impl Into<String>, executor: Box<dyn StepExecutor>) {
        self.by_step.insert(step.into(), executor);
    }

    pub fn contains(&self, step: &str) -> bool {
        self.by_step.contains_key(step)
    }
}

impl ExecutorSource for Executors {
    fn executor_for(&mut self, step: &StepDescriptor) -> Option<&mut dyn StepExecutor> {
        match self.by_step.get_mut(&step.name) {
            Some(e) => Some(e.as_mut()),
            None => None,
        }
    }
}

/// Builds a fresh decorator for a run, given the run's artifacts directory.
pub type DecoratorFactory = Box<dyn Fn(&Path) -> Box<dyn Decorator>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Bypass gating for this one run; the record is tagged `forced`.
    pub force: bool,
    /// Overrides the step's `seed` config key (default 0).
    pub seed: Option<u64>,
}

pub struct Project {
    manifest: ProjectManifest,
    store: Store,
    runs: BTreeMap<String, Vec<RunRecord>>,
    states: BTreeMap<String, StepState>,
    last_run_id: Option<RunId>,
    events: Option<EventLog>,
    loggers: Vec<Box<dyn Logger>>,
    decorators: Vec<(Option<String>, DecoratorFactory)>,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project")
            .field("manifest", &self.manifest)
            .field("states", &self.states)
            .field("runs", &self.runs.values().map(Vec::len).sum::<usize>())
            .finish()
    }
}

fn valid_step_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Project {
    /// Creates a new store at `store_root` with no steps.
    pub fn init(
        store_root: impl Into<PathBuf>,
        name: impl Into<String>,
        registry: MetricRegistry,
    ) -> Result<Self, ProjectError> {
        let store = Store::new(store_root);
        if store.exists() {
            return Err(StoreError::AlreadyInitialized(store.root().to_path_buf()).into());
        }
        let manifest = ProjectManifest {
            name: name.into(),
            steps: Vec::new(),
            metric_registry: registry,
            data: None,
            store_root: store.root().to_path_buf(),
        };
        let project = Self::from_parts(manifest, store, BTreeMap::new(), BTreeMap::new());
        project.save()?;
        Ok(project)
    }

    /// Reads the manifest, every run record and every state file.
    pub fn load(store_root: impl Into<PathBuf>) -> Result<Self, ProjectError> {
        let store = Store::new(store_root);
        let manifest = store.read_manifest()?;
        let mut runs = BTreeMap::new();
        let mut states = BTreeMap::new();
        for step in &manifest.steps {
            runs.insert(step.name.clone(), store.read_runs(&step.name)?);
            states.insert(step.name.clone(), store.read_state(&step.name)?);
        }
        Ok(Self::from_parts(manifest, store, runs, states))
    }

    fn from_parts(
        manifest: ProjectManifest,
        store: Store,
        runs: BTreeMap<String, Vec<RunRecord>>,
        states: BTreeMap<String, StepState>,
    ) -> Self {
        let last_run_id = runs.values().flatten().map(|r| r.run_id.clone()).max();
        Self {
            manifest,
            store,
            runs,
            states,
            last_run_id,
            events: None,
            loggers: Vec::new(),
            decorators: Vec::new(),
        }
    }

    /// Rewrites the manifest, every state file and every run record.
    pub fn save(&self) -> Result<(), ProjectError> {
        self.store.write_manifest(&self.manifest)?;
        for step in &self.manifest.steps {
            if let Some(state) = self.states.get(&step.name) {
                if *state != StepState::NotStarted {
                    self.store.write_state(&step.name, *state)?;
                }
            }
            for run in self.runs.get(&step.name).into_iter().flatten() {
                self.store.write_run(run)?;
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &ProjectManifest {
        &self.manifest
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn registry(&self) -> &MetricRegistry {
        &self.manifest.metric_registry
    }

    /// Sets the synthetic task used by CLI-driven recipe steps.
    pub fn set_data(&mut self, data: crate::backend::BlobsSpec) -> Result<(), ProjectError> {
        self.manifest.data = Some(data);
        self.store.write_manifest(&self.manifest)?;
        Ok(())
    }

    /// Runs of `step`, oldest first.
    pub fn runs(&self, step: &str) -> &[RunRecord] {
        self.runs.get(step).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.values().flatten()
    }

    pub fn find_run(&self, run_id: &str) -> Option<&RunRecord> {
        self.all_runs().find(|r| r.run_id.as_str() == run_id)
    }

    pub fn latest_run(&self, step: &str) -> Option<&RunRecord> {
        self.runs(step).last()
    }

    /// Persisted state without the staleness overlay.
    pub fn base_state(&self, step: &str) -> StepState {
        self.states.get(step).copied().unwrap_or(StepState::NotStarted)
    }

    pub fn add_logger(&mut self, logger: Box<dyn Logger>) {
        self.loggers.push(logger);
    }

    /// Attaches a decorator to every run of `step`, or of every step when `None`.
    pub fn add_decorator(&mut self, step: Option<&str>, factory: DecoratorFactory) {
        self.decorators.push((step.map(str::to_string), factory));
    }

    pub fn add_step(&mut self, descriptor: StepDescriptor) -> Result<(), ProjectError> {
        if !valid_step_name(&descriptor.name) {
            return Err(ProjectError::InvalidStepName(descriptor.name));
        }
        if self.manifest.step(&descriptor.name).is_some() {
            return Err(ProjectError::DuplicateStepName(descriptor.name));
        }
        if descriptor.checks.is_empty() {
            return Err(ProjectError::EmptyCheckList(descriptor.name));
        }
        for check in &descriptor.checks {
            check
                .validate(&self.manifest.metric_registry)
                .map_err(|source| ProjectError::InvalidCheck {
                    step: descriptor.name.clone(),
                    source,
                })?;
        }
        self.states
            .insert(descriptor.name.clone(), StepState::NotStarted);
        self.runs.insert(descriptor.name.clone(), Vec::new());
        self.manifest.steps.push(descriptor);
        self.store.write_manifest(&self.manifest)?;
        Ok(())
    }

    fn descriptor(&self, step: &str) -> Result<&StepDescriptor, ProjectError> {
        self.manifest
            .step(step)
            .ok_or_else(|| ProjectError::UnknownStep(step.to_string()))
    }

    /// Fingerprint of the step's watched sources as they are now.
    pub fn current_fingerprint(&self, step: &str) -> Result<Fingerprint, ProjectError> {
        let descriptor = self.descriptor(step)?;
        let base = self.store.source_base();
        let mut sources = Vec::with_capacity(descriptor.watched_sources.len());
        for w in &descriptor.watched_sources {
            let content = match &w.source {
                SourceRef::Inline(text) => text.clone().into_bytes(),
                SourceRef::Path(path) => {
                    std::fs::read(base.join(path)).map_err(|source| ProjectError::Source {
                        step: step.to_string(),
                        label: w.label.clone(),
                        source,
                    })?
                }
            };
            sources.push((w.label.clone(), content));
        }
        Ok(fingerprint_sources(&sources)?)
    }

    /// Current fingerprint of every step whose sources are readable.
    pub fn current_fingerprints(&self) -> BTreeMap<String, Fingerprint> {
        self.manifest
            .steps
            .iter()
            .filter_map(|s| Some((s.name.clone(), self.current_fingerprint(&s.name).ok()?)))
            .collect()
    }

    fn snapshots(&self) -> BTreeMap<String, StepSnapshot> {
        self.manifest
            .steps
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    StepSnapshot {
                        state: self.base_state(&s.name),
                        latest_fingerprint: self.latest_run(&s.name).map(|r| r.fingerprint.clone()),
                    },
                )
            })
            .collect()
    }

    /// Persisted states with the staleness overlay applied.
    pub fn step_states(&self) -> BTreeMap<String, StepState> {
        mark_staleness(&self.snapshots(), &self.current_fingerprints())
    }

    pub fn step_state(&self, step: &str) -> Result<StepState, ProjectError> {
        self.descriptor(step)?;
        Ok(self.step_states()[step])
    }

    fn check_gate(&self, index: usize) -> Result<(), ProjectError> {
        let states = self.step_states();
        for earlier in &self.manifest.steps[..index] {
            let state = states[&earlier.name];
            if state != StepState::Passed {
                return Err(ProjectError::GateViolation {
                    step: self.manifest.steps[index].name.clone(),
                    blocking: earlier.name.clone(),
                    state,
                });
            }
        }
        Ok(())
    }

    fn next_run_id(&mut self) -> RunId {
        let id = RunId::next(Utc::now(), self.last_run_id.as_ref());
        self.last_run_id = Some(id.clone());
        id
    }

    fn emit(&mut self, event: LogEvent) -> Result<(), ProjectError> {
        if self.events.is_none() {
            self.events = Some(EventLog::open(self.store.events_file())?);
        }
        if let Some(log) = self.events.as_mut() {
            log.append_event(&event)?;
        }
        for logger in &mut self.loggers {
            logger.log(&event)?;
        }
        Ok(())
    }

    /// Runs one step through `executor`, evaluates its checks and persists the record.
    ///
    /// Executor and decorator failures do not return `Err`: they produce a
    /// `Failed` record whose check outcomes carry the error message.
    pub fn run_step(
        &mut self,
        step: &str,
        executor: &mut dyn StepExecutor,
        options: RunOptions,
    ) -> Result<RunRecord, ProjectError> {
        let index = self
            .manifest
            .position(step)
            .ok_or_else(|| ProjectError::UnknownStep(step.to_string()))?;
        if !options.force {
            self.check_gate(index)?;
        }
        let fingerprint = self.current_fingerprint(step)?;
        let descriptor = self.manifest.steps[index].clone();
        let seed = options
            .seed
            .or_else(|| descriptor.config.get("seed").and_then(Scalar::as_u64))
            .unwrap_or(0);
        let run_id = self.next_run_id();
        let started_at = Utc::now();

        self.store.write_state(step, StepState::Running)?;
        self.states.insert(step.to_string(), StepState::Running);
        self.emit(
            LogEvent::info("step started")
                .step(step)
                .run(run_id.as_str())
                .with("seed", seed)
                .with("forced", options.force),
        )?;

        let artifacts_dir = self.store.artifacts_dir(&run_id);
        let decorators: Vec<Box<dyn Decorator>> = self
            .decorators
            .iter()
            .filter(|(target, _)| target.as_deref().is_none_or(|t| t == step))
            .map(|(_, factory)| factory(&artifacts_dir))
            .collect();

        let history = StoredHistory { runs: &self.runs };
        let registry = &self.manifest.metric_registry;
        let mut ctx = StepContext {
            descriptor: &descriptor,
            run_id: &run_id,
            seed,
            registry,
            history: &history,
            artifacts_dir: artifacts_dir.clone(),
            metrics: MetricSink::new(registry),
            decorators,
            references: Vec::new(),
        };
        let mut failure = executor.execute(&mut ctx).err();
        let mut decorators = std::mem::take(&mut ctx.decorators);
        for d in &mut decorators {
            if let Err(e) = d.finish(&mut ctx.metrics) {
                failure.get_or_insert(e.context(format!("decorator `{}`", d.name())));
            }
        }
        let StepContext {
            metrics,
            references,
            ..
        } = ctx;
        let metrics = metrics.into_map();

        let check_outcomes = match &failure {
            Some(err) => vec![CheckOutcome {
                check: "executor completes".to_string(),
                passed: false,
                message: format!("{err:#}"),
            }],
            None => {
                let layered = LayeredHistory {
                    stored: &history,
                    references: &references,
                };
                descriptor
                    .checks
                    .iter()
                    .map(|spec| {
                        evaluate_check(spec, &metrics, registry, &layered).unwrap_or_else(|e| {
                            CheckOutcome {
                                check: spec.to_string(),
                                passed: false,
                                message: e.to_string(),
                            }
                        })
                    })
                    .collect()
            }
        };
        let final_state = if !check_outcomes.is_empty() && check_outcomes.iter().all(|c| c.passed)
        {
            StepState::Passed
        } else {
            StepState::Failed
        };

        let record = RunRecord {
            run_id: run_id.clone(),
            step_name: step.to_string(),
            started_at,
            finished_at: Utc::now(),
            seed,
            config: descriptor.config.clone(),
            metrics,
            fingerprint,
            check_outcomes,
            final_state,
            forced: options.force,
        };

        if !references.is_empty() {
            let text = serde_json::to_string_pretty(&references).expect("serializable");
            store::write_atomic(&artifacts_dir.join("reference_runs.json"), text.as_bytes())?;
        }
        self.store.write_run(&record)?;
        self.store.write_state(step, final_state)?;
        self.states.insert(step.to_string(), final_state);
        self.runs
            .entry(step.to_string())
            .or_default()
            .push(record.clone());

        let level = if final_state == StepState::Passed {
            Level::Info
        } else {
            Level::Warn
        };
        let mut event = LogEvent::new(level, "step finished")
            .step(step)
            .run(run_id.as_str())
            .with("state", final_state.token())
            .with("checks_passed", record.checks_passed())
            .with("checks_total", record.check_outcomes.len());
        for (key, value) in &record.metrics {
            event = event.with(key, *value);
        }
        self.emit(event)?;
        Ok(record)
    }

    /// Runs every step up to and including `last_step` in order, stopping after
    /// the first step that fails.
    pub fn run_until(
        &mut self,
        last_step: &str,
        executors: &mut dyn ExecutorSource,
        seed: Option<u64>,
    ) -> Result<Vec<RunRecord>, ProjectError> {
        let last = self
            .manifest
            .position(last_step)
            .ok_or_else(|| ProjectError::UnknownStep(last_step.to_string()))?;
        let mut records = Vec::new();
        for index in 0..=last {
            let descriptor = self.manifest.steps[index].clone();
            let executor = executors
                .executor_for(&descriptor)
                .ok_or_else(|| ProjectError::NoExecutor(descriptor.name.clone()))?;
            let record = self.run_step(
                &descriptor.name,
                executor,
                RunOptions { force: false, seed },
            )?;
            let passed = record.passed();
            records.push(record);
            if !passed {
                break;
            }
        }
        Ok(records)
    }
}

struct StoredHistory<'a> {
    runs: &'a BTreeMap<String, Vec<RunRecord>>,
}

impl RunHistory for StoredHistory<'_> {
    fn passed_values(&self, step: &str, metric: &str) -> Vec<(String, f64)> {
        self.runs
            .get(step)
            .into_iter()
            .flatten()
            .filter(|r| r.passed())
            .filter_map(|r| r.metrics.get(metric).map(|&v| (r.run_id.to_string(), v)))
            .collect()
    }
}

struct LayeredHistory<'a> {
    stored: &'a StoredHistory<'a>,
    references: &'a [ReferenceRun],
}

impl RunHistory for LayeredHistory<'_> {
    fn passed_values(&self, step: &str, metric: &str) -> Vec<(String, f64)> {
        let mut values = self.stored.passed_values(step, metric);
        values.extend(
            self.references
                .iter()
                .filter(|r| r.step == step)
                .filter_map(|r| r.metrics.get(metric).map(|&v| (format!("reference:{}", r.step), v))),
        );
        values
    }
}

impl RunHistory for Project {
    fn passed_values(&self, step: &str, metric: &str) -> Vec<(String, f64)> {
        StoredHistory { runs: &self.runs }.passed_values(step, metric)
    }
}
