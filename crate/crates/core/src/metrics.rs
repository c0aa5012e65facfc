//! Project-wide metric registry shared by every step.
//!
//! Metric values are keyed `<stage>/<name>` (for example `train/cross_entropy`)
//! both in memory and inside persisted run records.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::project::RunRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric `{0}` is already registered")]
    DuplicateMetric(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("malformed metric key `{0}`: expected `train/<name>` or `validation/<name>`")]
    MalformedKey(String),
    #[error("metric `{key}` has non-finite value {value}")]
    NonFinite { key: String, value: f64 },
    #[error("metric `{0}` recorded twice in one run")]
    AlreadyRecorded(String),
    #[error("predictions and labels differ in length ({predicted} vs {truth})")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("no samples to score")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    /// Orders `a` before `b` when `a` is better.
    pub fn best_first(self, a: f64, b: f64) -> Ordering {
        match self {
            Direction::HigherIsBetter => b.total_cmp(&a),
            Direction::LowerIsBetter => a.total_cmp(&b),
        }
    }

    /// Strict improvement of `candidate` over `reference`.
    pub fn improves(self, candidate: f64, reference: f64) -> bool {
        match self {
            Direction::HigherIsBetter => candidate > reference,
            Direction::LowerIsBetter => candidate < reference,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::HigherIsBetter => Direction::LowerIsBetter,
            Direction::LowerIsBetter => Direction::HigherIsBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricStage {
    Train,
    Validation,
}

impl MetricStage {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricStage::Train => "train",
            MetricStage::Validation => "validation",
        }
    }
}

/// Which stages a registered metric may be recorded for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageScope {
    Train,
    Validation,
    Both,
}

impl StageScope {
    pub fn allows(self, stage: MetricStage) -> bool {
        matches!(
            (self, stage),
            (StageScope::Both, _)
                | (StageScope::Train, MetricStage::Train)
                | (StageScope::Validation, MetricStage::Validation)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub name: String,
    pub direction: Direction,
    pub stage: StageScope,
}

impl MetricDef {
    pub fn new(name: impl Into<String>, direction: Direction, stage: StageScope) -> Self {
        Self {
            name: name.into(),
            direction,
            stage,
        }
    }
}

/// `<stage>/<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricKey {
    pub stage: MetricStage,
    pub name: String,
}

impl MetricKey {
    pub fn new(stage: MetricStage, name: impl Into<String>) -> Self {
        Self {
            stage,
            name: name.into(),
        }
    }

    pub fn train(name: impl Into<String>) -> Self {
        Self::new(MetricStage::Train, name)
    }

    pub fn validation(name: impl Into<String>) -> Self {
        Self::new(MetricStage::Validation, name)
    }
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.stage.as_str(), self.name)
    }
}

impl FromStr for MetricKey {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || MetricError::MalformedKey(s.to_string());
        let (stage, name) = s.split_once('/').ok_or_else(malformed)?;
        let stage = match stage {
            "train" => MetricStage::Train,
            "validation" => MetricStage::Validation,
            _ => return Err(malformed()),
        };
        if name.is_empty() || name.contains('/') {
            return Err(malformed());
        }
        Ok(MetricKey::new(stage, name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub name: String,
    pub stage: MetricStage,
    pub value: f64,
}

impl MetricValue {
    pub fn new(stage: MetricStage, name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            stage,
            value,
        }
    }

    pub fn key(&self) -> MetricKey {
        MetricKey::new(self.stage, self.name.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricRegistry {
    defs: Vec<MetricDef>,
}

impl MetricRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, def: MetricDef) -> Result<&mut Self, MetricError> {
        if self.get(&def.name).is_some() {
            return Err(MetricError::DuplicateMetric(def.name));
        }
        self.defs.push(def);
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&MetricDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn defs(&self) -> &[MetricDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Resolves a `<stage>/<name>` key to its definition, checking the stage is allowed.
    pub fn resolve(&self, key: &str) -> Result<&MetricDef, MetricError> {
        let parsed: MetricKey = key.parse()?;
        match self.get(&parsed.name) {
            Some(def) if def.stage.allows(parsed.stage) => Ok(def),
            _ => Err(MetricError::UnknownMetric(key.to_string())),
        }
    }

    /// Validates one value for recording: registered, stage allowed, finite.
    pub fn check_value(&self, value: &MetricValue) -> Result<String, MetricError> {
        let key = value.key().to_string();
        self.resolve(&key)?;
        if !value.value.is_finite() {
            return Err(MetricError::NonFinite {
                key,
                value: value.value,
            });
        }
        Ok(key)
    }
}

/// Append-only metric collector for one run.
#[derive(Debug)]
pub struct MetricSink<'r> {
    registry: &'r MetricRegistry,
    values: BTreeMap<String, f64>,
}

impl<'r> MetricSink<'r> {
    pub fn new(registry: &'r MetricRegistry) -> Self {
        Self {
            registry,
            values: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, value: MetricValue) -> Result<(), MetricError> {
        let key = self.registry.check_value(&value)?;
        if self.values.contains_key(&key) {
            return Err(MetricError::AlreadyRecorded(key));
        }
        self.values.insert(key, value.value);
        Ok(())
    }

    pub fn record_all(
        &mut self,
        values: impl IntoIterator<Item = MetricValue>,
    ) -> Result<(), MetricError> {
        values.into_iter().try_for_each(|v| self.record(v))
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn into_map(self) -> BTreeMap<String, f64> {
        self.values
    }
}

/// Accuracy and mean cross-entropy for one stage.
pub fn classification_metrics(
    stage: MetricStage,
    predicted: &[usize],
    truth: &[usize],
    mean_loss: f64,
) -> Result<Vec<MetricValue>, MetricError> {
    if predicted.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(vec![
        MetricValue::new(stage, ACCURACY, correct as f64 / truth.len() as f64),
        MetricValue::new(stage, CROSS_ENTROPY, mean_loss),
    ])
}

/// Runs carrying `metric`, best first by the metric's direction, ties by run id.
/// Runs without the metric are skipped.
pub fn compare_runs<'a>(
    runs: impl IntoIterator<Item = &'a RunRecord>,
    metric: &str,
    registry: &MetricRegistry,
) -> Result<Vec<(String, f64)>, MetricError> {
    let direction = registry.resolve(metric)?.direction;
    let mut ranked: Vec<(String, f64)> = runs
        .into_iter()
        .filter_map(|r| r.metrics.get(metric).map(|&v| (r.run_id.to_string(), v)))
        .collect();
    ranked.sort_by(|a, b| direction.best_first(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

pub const ACCURACY: &str = "accuracy";
pub const CROSS_ENTROPY: &str = "cross_entropy";
pub const GENERALIZATION_GAP: &str = "generalization_gap";
pub const WEIGHT_NORM: &str = "weight_norm";
pub const MIN_CLASS_PROPORTION: &str = "min_class_proportion";
pub const HAS_NON_FINITE: &str = "has_non_finite";
pub const N_SAMPLES: &str = "n_samples";
pub const N_FEATURES: &str = "n_features";
pub const N_CLASSES: &str = "n_classes";
pub const WALL_TIME_SECONDS: &str = "wall_time_seconds";

/// Registry with every metric the built-in recipe steps and decorators record.
pub fn builtin_registry() -> MetricRegistry {
    use Direction::*;
    let mut reg = MetricRegistry::new();
    for def in [
        MetricDef::new(ACCURACY, HigherIsBetter, StageScope::Both),
        MetricDef::new(CROSS_ENTROPY, LowerIsBetter, StageScope::Both),
        MetricDef::new(GENERALIZATION_GAP, LowerIsBetter, StageScope::Validation),
        MetricDef::new(WEIGHT_NORM, LowerIsBetter, StageScope::Train),
        MetricDef::new(MIN_CLASS_PROPORTION, HigherIsBetter, StageScope::Train),
        MetricDef::new(HAS_NON_FINITE, LowerIsBetter, StageScope::Train),
        MetricDef::new(N_SAMPLES, HigherIsBetter, StageScope::Train),
        MetricDef::new(N_FEATURES, HigherIsBetter, StageScope::Train),
        MetricDef::new(N_CLASSES, HigherIsBetter, StageScope::Train),
        MetricDef::new(WALL_TIME_SECONDS, LowerIsBetter, StageScope::Train),
    ] {
        reg.register(def).expect("builtin names are unique");
    }
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> MetricRegistry {
        let mut reg = MetricRegistry::new();
        reg.register(MetricDef::new(ACCURACY, Direction::HigherIsBetter, StageScope::Both))
            .unwrap()
            .register(MetricDef::new(CROSS_ENTROPY, Direction::LowerIsBetter, StageScope::Both))
            .unwrap();
        reg
    }

    #[test]
    fn register_two_then_duplicate() {
        let mut reg = registry();
        assert_eq!(reg.len(), 2);
        let err = reg
            .register(MetricDef::new(ACCURACY, Direction::HigherIsBetter, StageScope::Train))
            .unwrap_err();
        assert_eq!(err, MetricError::DuplicateMetric("accuracy".into()));
    }

    #[test]
    fn sink_rejects_unknown_and_non_finite() {
        let reg = registry();
        let mut sink = MetricSink::new(&reg);
        assert_eq!(
            sink.record(MetricValue::new(MetricStage::Train, "f1", 0.5)),
            Err(MetricError::UnknownMetric("train/f1".into()))
        );
        assert!(matches!(
            sink.record(MetricValue::new(MetricStage::Train, ACCURACY, f64::NAN)),
            Err(MetricError::NonFinite { .. })
        ));
        assert!(matches!(
            sink.record(MetricValue::new(MetricStage::Train, ACCURACY, f64::INFINITY)),
            Err(MetricError::NonFinite { .. })
        ));
        sink.record(MetricValue::new(MetricStage::Train, ACCURACY, 0.5)).unwrap();
        assert_eq!(
            sink.record(MetricValue::new(MetricStage::Train, ACCURACY, 0.6)),
            Err(MetricError::AlreadyRecorded("train/accuracy".into()))
        );
        assert_eq!(sink.get("train/accuracy"), Some(0.5));
    }

    #[test]
    fn stage_scope_enforced() {
        let reg = builtin_registry();
        assert!(reg.resolve("validation/generalization_gap").is_ok());
        assert!(reg.resolve("train/generalization_gap").is_err());
        assert!(reg.resolve("test/accuracy").is_err());
        assert!(reg.resolve("accuracy").is_err());
    }

    #[test]
    fn key_round_trip() {
        let k: MetricKey = "validation/accuracy".parse().unwrap();
        assert_eq!(k, MetricKey::validation("accuracy"));
        assert_eq!(k.to_string(), "validation/accuracy");
        assert!("train/".parse::<MetricKey>().is_err());
        assert!("train/a/b".parse::<MetricKey>().is_err());
    }

    #[test]
    fn accuracy_counts() {
        let m = classification_metrics(MetricStage::Train, &[1, 0, 1], &[1, 0, 1], 0.1).unwrap();
        assert_eq!(m[0].value, 1.0);
        let m = classification_metrics(MetricStage::Train, &[1, 0, 1], &[1, 1, 1], 0.1).unwrap();
        assert!((m[0].value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m[1].value, 0.1);
    }

    #[test]
    fn uniform_four_class_loss_is_ln4() {
        let (loss, _) = crate::backend::model::softmax_cross_entropy(
            &ndarray::Array2::zeros((4, 4)),
            &[0, 1, 2, 3],
        );
        let m = classification_metrics(MetricStage::Validation, &[0; 4], &[0, 1, 2, 3], loss)
            .unwrap();
        assert!((m[1].value - 1.386294).abs() < 1e-6);
        assert_eq!(m[1].key().to_string(), "validation/cross_entropy");
    }

    #[test]
    fn classification_errors() {
        assert_eq!(
            classification_metrics(MetricStage::Train, &[1], &[1, 0], 0.0),
            Err(MetricError::LengthMismatch { predicted: 1, truth: 2 })
        );
        assert_eq!(
            classification_metrics(MetricStage::Train, &[], &[], 0.0),
            Err(MetricError::EmptyInput)
        );
    }

    #[test]
    fn direction_helpers() {
        assert!(Direction::HigherIsBetter.improves(0.9, 0.8));
        assert!(!Direction::HigherIsBetter.improves(0.8, 0.8));
        assert!(Direction::LowerIsBetter.improves(0.3, 0.5));
        assert_eq!(Direction::LowerIsBetter.reversed(), Direction::HigherIsBetter);
    }
}
