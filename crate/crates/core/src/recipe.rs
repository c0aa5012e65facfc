//! Built-in recipe steps: analyze data, check loss on init, overfit one batch,
//! regularize, transfer learning. Each is an executor over a [`DataModule`] plus
//! a model spec, shipped with default checks.

use std::collections::BTreeMap;
use std::rc::Rc;

use anyhow::Context;
use serde::Serialize;
use thiserror::Error;

use crate::backend::{
    evaluate, first_batch, train, BlobsSpec, DataModule, InMemoryData, InitScheme, Params,
    TrainConfig, TrainOutcome,
};
use crate::checks::CheckSpec;
use crate::metrics::{
    classification_metrics, MetricKey, MetricStage, MetricValue, ACCURACY, CROSS_ENTROPY,
    GENERALIZATION_GAP, HAS_NON_FINITE, MIN_CLASS_PROPORTION, N_CLASSES, N_FEATURES, N_SAMPLES,
    WEIGHT_NORM,
};
use crate::project::{
    Config, Executors, ProjectManifest, Scalar, StepContext, StepDescriptor, StepExecutor,
    StepKind,
};

pub const ANALYZE_DATA: &str = "analyze_data";
pub const CHECK_LOSS_ON_INIT: &str = "check_loss_on_init";
pub const OVERFIT_ONE_BATCH: &str = "overfit_one_batch";
pub const REGULARIZE: &str = "regularize";
pub const TRANSFER_LEARNING: &str = "transfer_learning";

pub const DEFAULT_INIT_TOL: f64 = 1e-3;
pub const DEFAULT_OVERFIT_THRESHOLD: f64 = 1e-2;

/// Suffix of the in-run from-scratch baseline a transfer step compares against.
pub const SCRATCH_SUFFIX: &str = "@scratch";

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("training split is empty")]
    EmptyDataset,
    #[error("baseline step `{0}` has no passed run recording train and validation cross-entropy")]
    MissingBaseline(String),
    #[error("source parameters ({found}) do not fit the model ({expected})")]
    ShapeMismatch { expected: String, found: String },
    #[error("config key `{key}`: {reason}")]
    BadConfig { key: String, reason: String },
    #[error("{0}")]
    Precondition(String),
}

/// How to build a fresh model for a task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub hidden_width: usize,
    pub init: InitScheme,
}

impl ModelSpec {
    pub fn new(hidden_width: usize) -> Self {
        Self {
            hidden_width,
            init: InitScheme::ZeroOutput,
        }
    }

    pub fn build(&self, dm: &dyn DataModule, seed: u64) -> Params {
        Params::init(
            dm.n_features(),
            self.hidden_width,
            dm.n_classes(),
            self.init,
            seed,
        )
    }
}

/// Typed view of a recipe step's flat config.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub tol: Option<f64>,
    pub baseline: Option<String>,
    pub source_iters: usize,
}

impl StepSettings {
    /// Keys: `lr`, `max_iters`, `batch_size`, `l2`, `hidden_width`, `tol`,
    /// plus `init_scale` (uniform init instead of zero output), `baseline`
    /// and `source_iters`. Missing keys take [`TrainConfig::default`] values.
    pub fn from_config(config: &Config, seed: u64) -> Result<Self, RecipeError> {
        let defaults = TrainConfig::default();
        let real = |key: &str| -> Result<Option<f64>, RecipeError> {
            config
                .get(key)
                .map(|v| {
                    v.as_f64().ok_or_else(|| RecipeError::BadConfig {
                        key: key.into(),
                        reason: format!("expected a number, got {v}"),
                    })
                })
                .transpose()
        };
        let count = |key: &str| -> Result<Option<usize>, RecipeError> {
            config
                .get(key)
                .map(|v| {
                    v.as_u64()
                        .map(|n| n as usize)
                        .ok_or_else(|| RecipeError::BadConfig {
                            key: key.into(),
                            reason: format!("expected a non-negative integer, got {v}"),
                        })
                })
                .transpose()
        };
        let hidden_width = count("hidden_width")?.unwrap_or(defaults.hidden_width);
        let init = match real("init_scale")? {
            Some(scale) => InitScheme::Uniform(scale),
            None => InitScheme::ZeroOutput,
        };
        let baseline = match config.get("baseline") {
            None => None,
            Some(Scalar::Str(s)) => Some(s.clone()),
            Some(other) => {
                return Err(RecipeError::BadConfig {
                    key: "baseline".into(),
                    reason: format!("expected a step name, got {other}"),
                })
            }
        };
        Ok(Self {
            train: TrainConfig {
                lr: real("lr")?.unwrap_or(defaults.lr),
                max_iters: count("max_iters")?.unwrap_or(defaults.max_iters),
                batch_size: count("batch_size")?.unwrap_or(defaults.batch_size),
                l2: real("l2")?.unwrap_or(defaults.l2),
                seed,
                hidden_width,
            },
            model: ModelSpec { hidden_width, init },
            tol: real("tol")?,
            baseline,
            source_iters: count("source_iters")?.unwrap_or(500),
        })
    }
}

/// Summary statistics of a training split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataStats {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_proportions: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub has_non_finite: bool,
}

impl DataStats {
    pub fn compute(dm: &dyn DataModule) -> Result<Self, RecipeError> {
        let split = dm.train_split();
        if split.is_empty() {
            return Err(RecipeError::EmptyDataset);
        }
        let n = split.n_samples() as f64;
        let x = split.features();
        let feature_means: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let feature_stds = x
            .columns()
            .into_iter()
            .zip(&feature_means)
            .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self {
            n_samples: split.n_samples(),
            n_features: split.n_features(),
            n_classes: split.n_classes(),
            class_proportions: split
                .class_counts()
                .into_iter()
                .map(|c| c as f64 / n)
                .collect(),
            feature_means,
            feature_stds,
            has_non_finite: x.iter().any(|v| !v.is_finite()),
        })
    }

    pub fn min_class_proportion(&self) -> f64 {
        self.class_proportions
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn train_metric(name: &str) -> String {
    MetricKey::train(name).to_string()
}

fn validation_metric(name: &str) -> String {
    MetricKey::validation(name).to_string()
}

fn write_artifact(ctx: &StepContext<'_>, file: &str, contents: &str) -> anyhow::Result<()> {
    let path = ctx.artifacts_dir()?.join(file);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

// ── Executors ───────────────────────────────────────────────────────────────

/// Records split statistics; full stats go to `data_stats.json` in the run's artifacts.
pub fn analyze_data(ctx: &mut StepContext<'_>, dm: &dyn DataModule) -> anyhow::Result<DataStats> {
    let stats = DataStats::compute(dm)?;
    write_artifact(ctx, "data_stats.json", &serde_json::to_string_pretty(&stats)?)?;
    let train = MetricStage::Train;
    ctx.record_all([
        MetricValue::new(train, N_SAMPLES, stats.n_samples as f64),
        MetricValue::new(train, N_FEATURES, stats.n_features as f64),
        MetricValue::new(train, N_CLASSES, stats.n_classes as f64),
        MetricValue::new(train, MIN_CLASS_PROPORTION, stats.min_class_proportion()),
        MetricValue::new(train, HAS_NON_FINITE, f64::from(u8::from(stats.has_non_finite))),
    ])?;
    Ok(stats)
}

/// Validation cross-entropy of the untrained model.
pub fn check_loss_on_init(
    ctx: &mut StepContext<'_>,
    model: &ModelSpec,
    dm: &dyn DataModule,
) -> anyhow::Result<f64> {
    let params = model.build(dm, ctx.seed());
    let eval = evaluate(&params, dm.validation_split())?;
    ctx.record_all(classification_metrics(
        MetricStage::Validation,
        &eval.predictions,
        dm.validation_split().labels(),
        eval.mean_loss,
    )?)?;
    Ok(eval.mean_loss)
}

/// Trains on the first batch drawn under the run seed (saved as
/// `overfit_batch.csv`) and records the final loss on that batch.
pub fn overfit_one_batch(
    ctx: &mut StepContext<'_>,
    model: &ModelSpec,
    dm: &dyn DataModule,
    config: &TrainConfig,
) -> anyhow::Result<TrainOutcome> {
    let data = dm.train_split();
    if config.max_iters == 0 {
        return Err(RecipeError::Precondition("max_iters must be at least 1".into()).into());
    }
    if config.batch_size > data.n_samples() {
        return Err(RecipeError::Precondition(format!(
            "batch_size {} exceeds training split size {}",
            config.batch_size,
            data.n_samples()
        ))
        .into());
    }
    let batch = first_batch(data, config.batch_size, config.seed);
    write_artifact(ctx, "overfit_batch.csv", &batch.to_csv())?;
    let params = model.build(dm, config.seed);
    let outcome = train(params, &batch, config, ctx.decorators_mut())?;
    record_fit(ctx, &outcome.params, &batch, dm.validation_split())?;
    Ok(outcome)
}

/// Train/validation cross-entropy and accuracy, generalization gap and weight norm.
fn record_fit(
    ctx: &mut StepContext<'_>,
    params: &Params,
    train_split: &crate::backend::DatasetSplit,
    validation_split: &crate::backend::DatasetSplit,
) -> anyhow::Result<()> {
    let tr = evaluate(params, train_split)?;
    let va = evaluate(params, validation_split)?;
    ctx.record_all(classification_metrics(
        MetricStage::Train,
        &tr.predictions,
        train_split.labels(),
        tr.mean_loss,
    )?)?;
    ctx.record_all(classification_metrics(
        MetricStage::Validation,
        &va.predictions,
        validation_split.labels(),
        va.mean_loss,
    )?)?;
    ctx.record_all([
        MetricValue::new(
            MetricStage::Validation,
            GENERALIZATION_GAP,
            va.mean_loss - tr.mean_loss,
        ),
        MetricValue::new(MetricStage::Train, WEIGHT_NORM, params.weight_norm()),
    ])?;
    Ok(())
}

/// Trains from scratch on the full training split.
pub fn fit_full(
    ctx: &mut StepContext<'_>,
    model: &ModelSpec,
    dm: &dyn DataModule,
    config: &TrainConfig,
) -> anyhow::Result<TrainOutcome> {
    let params = model.build(dm, config.seed);
    let outcome = train(params, dm.train_split(), config, ctx.decorators_mut())?;
    record_fit(ctx, &outcome.params, dm.train_split(), dm.validation_split())?;
    Ok(outcome)
}

/// Full-split training with the configured L2 penalty; requires a passed
/// `baseline_step` run with both cross-entropies to compare gaps against.
pub fn regularize(
    ctx: &mut StepContext<'_>,
    model: &ModelSpec,
    dm: &dyn DataModule,
    config: &TrainConfig,
    baseline_step: &str,
) -> anyhow::Result<TrainOutcome> {
    let history = ctx.history();
    let has = |metric: &str| !history.passed_values(baseline_step, metric).is_empty();
    if !(has(&train_metric(CROSS_ENTROPY)) && has(&validation_metric(CROSS_ENTROPY))) {
        return Err(RecipeError::MissingBaseline(baseline_step.to_string()).into());
    }
    fit_full(ctx, model, dm, config)
}

/// Fine-tunes `source_params` for `config.max_iters` steps on the target task and
/// trains a from-scratch model with the same seed and budget as an in-run
/// reference under `<step>@scratch`.
pub fn transfer_learning(
    ctx: &mut StepContext<'_>,
    model: &ModelSpec,
    target: &dyn DataModule,
    source_params: &Params,
    config: &TrainConfig,
) -> anyhow::Result<TrainOutcome> {
    let scratch_init = model.build(target, config.seed);
    if !scratch_init.same_shape(source_params) {
        return Err(RecipeError::ShapeMismatch {
            expected: scratch_init.shape_string(),
            found: source_params.shape_string(),
        }
        .into());
    }
    let scratch = train(scratch_init, target.train_split(), config, &mut [])?;
    let scratch_eval = evaluate(&scratch.params, target.validation_split())?;
    let mut reference = BTreeMap::new();
    reference.insert(validation_metric(ACCURACY), scratch_eval.accuracy);
    reference.insert(validation_metric(CROSS_ENTROPY), scratch_eval.mean_loss);
    let scratch_name = format!("{}{SCRATCH_SUFFIX}", ctx.descriptor().name);
    ctx.add_reference_run(scratch_name, reference);

    let tuned = train(
        source_params.clone(),
        target.train_split(),
        config,
        ctx.decorators_mut(),
    )?;
    let eval = evaluate(&tuned.params, target.validation_split())?;
    ctx.record_all(classification_metrics(
        MetricStage::Validation,
        &eval.predictions,
        target.validation_split().labels(),
        eval.mean_loss,
    )?)?;
    Ok(tuned)
}

// ── Default step descriptors ────────────────────────────────────────────────

pub fn analyze_data_step(name: &str, n_classes: usize) -> StepDescriptor {
    StepDescriptor::new(name, StepKind::AnalyzeData)
        .check(CheckSpec::close_to(train_metric(HAS_NON_FINITE), 0.0, 0.0))
        .check(CheckSpec::greater_than(
            train_metric(MIN_CLASS_PROPORTION),
            1.0 / (4.0 * n_classes as f64),
        ))
}

pub fn check_loss_on_init_step(name: &str, n_classes: usize, tol: f64) -> StepDescriptor {
    StepDescriptor::new(name, StepKind::CheckLossOnInit)
        .check(CheckSpec::close_to(
            validation_metric(CROSS_ENTROPY),
            (n_classes as f64).ln(),
            tol,
        ))
        .set("hidden_width", 16usize)
        .set("tol", tol)
}

pub fn overfit_one_batch_step(name: &str, threshold: f64) -> StepDescriptor {
    StepDescriptor::new(name, StepKind::OverfitOneBatch)
        .check(CheckSpec::less_than(train_metric(CROSS_ENTROPY), threshold))
        .set("lr", 1.0)
        .set("max_iters", 5000usize)
        .set("batch_size", 16usize)
        .set("hidden_width", 16usize)
        .set("tol", threshold)
}

pub fn regularize_step(name: &str, baseline: &str) -> StepDescriptor {
    StepDescriptor::new(name, StepKind::Regularize)
        .check(CheckSpec::improved_over(
            validation_metric(GENERALIZATION_GAP),
            baseline,
        ))
        .set("lr", 0.2)
        .set("max_iters", 1000usize)
        .set("batch_size", 16usize)
        .set("hidden_width", 16usize)
        .set("l2", 0.01)
        .set("baseline", baseline)
}

pub fn transfer_learning_step(name: &str) -> StepDescriptor {
    StepDescriptor::new(name, StepKind::TransferLearning)
        .check(CheckSpec::improved_over(
            validation_metric(ACCURACY),
            format!("{name}{SCRATCH_SUFFIX}"),
        ))
        .set("lr", 0.1)
        .set("max_iters", 20usize)
        .set("batch_size", 16usize)
        .set("hidden_width", 16usize)
        .set("source_iters", 500usize)
}

/// The five built-in steps, in order, with default configs and checks.
pub fn default_steps(n_classes: usize) -> Vec<StepDescriptor> {
    vec![
        analyze_data_step(ANALYZE_DATA, n_classes),
        check_loss_on_init_step(CHECK_LOSS_ON_INIT, n_classes, DEFAULT_INIT_TOL),
        overfit_one_batch_step(OVERFIT_ONE_BATCH, DEFAULT_OVERFIT_THRESHOLD),
        regularize_step(REGULARIZE, OVERFIT_ONE_BATCH),
        transfer_learning_step(TRANSFER_LEARNING),
    ]
}

/// Where a transfer step's starting weights come from.
#[derive(Clone)]
pub enum TransferSource {
    Params(Box<Params>),
    /// Train a model of the step's spec on this task for `source_iters` iterations.
    Task(Rc<dyn DataModule>),
}

/// Dispatches a built-in step kind, reading its settings from the step config.
pub struct RecipeExecutor {
    kind: StepKind,
    data: Rc<dyn DataModule>,
    source: Option<TransferSource>,
}

impl RecipeExecutor {
    pub fn new(kind: StepKind, data: Rc<dyn DataModule>) -> Self {
        Self {
            kind,
            data,
            source: None,
        }
    }

    pub fn with_source(mut self, source: TransferSource) -> Self {
        self.source = Some(source);
        self
    }
}

impl StepExecutor for RecipeExecutor {
    fn execute(&mut self, ctx: &mut StepContext<'_>) -> anyhow::Result<()> {
        let settings = StepSettings::from_config(ctx.config(), ctx.seed())?;
        let dm = self.data.as_ref();
        match self.kind {
            StepKind::AnalyzeData => {
                analyze_data(ctx, dm)?;
            }
            StepKind::CheckLossOnInit => {
                check_loss_on_init(ctx, &settings.model, dm)?;
            }
            StepKind::OverfitOneBatch => {
                overfit_one_batch(ctx, &settings.model, dm, &settings.train)?;
            }
            StepKind::Regularize => {
                let baseline = settings.baseline.as_deref().ok_or_else(|| {
                    RecipeError::BadConfig {
                        key: "baseline".into(),
                        reason: "regularize needs a baseline step".into(),
                    }
                })?;
                regularize(ctx, &settings.model, dm, &settings.train, baseline)?;
            }
            StepKind::TransferLearning => {
                let source_params = match &self.source {
                    Some(TransferSource::Params(p)) => p.as_ref().clone(),
                    Some(TransferSource::Task(task)) => {
                        let config = TrainConfig {
                            max_iters: settings.source_iters,
                            ..settings.train.clone()
                        };
                        let init = settings.model.build(task.as_ref(), settings.train.seed);
                        train(init, task.train_split(), &config, &mut [])?.params
                    }
                    None => {
                        return Err(RecipeError::Precondition(
                            "transfer learning needs a source task or parameters".into(),
                        )
                        .into())
                    }
                };
                transfer_learning(ctx, &settings.model, dm, &source_params, &settings.train)?;
            }
            StepKind::Custom => {
                return Err(RecipeError::Precondition(
                    "custom steps need a caller-supplied executor".into(),
                )
                .into())
            }
        }
        Ok(())
    }
}

/// Source task for CLI transfer steps: same class centers, different samples.
pub fn source_task(spec: &BlobsSpec) -> anyhow::Result<InMemoryData> {
    let (train, validation) = crate::backend::make_blobs_around(
        &spec.centers(),
        spec.n_per_class,
        spec.spread,
        spec.seed.wrapping_add(1_000),
    )?;
    Ok(InMemoryData::new(train, validation))
}

/// Executors for every built-in step of `manifest`, all over `data`. Custom
/// steps are left for the caller to add.
pub fn executors(
    manifest: &ProjectManifest,
    data: Rc<dyn DataModule>,
    transfer: Option<TransferSource>,
) -> Executors {
    let mut out = Executors::new();
    for step in &manifest.steps {
        if step.kind == StepKind::Custom {
            continue;
        }
        let mut exec = RecipeExecutor::new(step.kind, data.clone());
        if let Some(source) = &transfer {
            exec = exec.with_source(source.clone());
        }
        out.insert(step.name.clone(), exec);
    }
    out
}
