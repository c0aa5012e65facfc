//! Boolean validators over a run's metrics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricError, MetricRegistry};

#[derive(Debug, Error, PartialEq)]
pub enum CheckError {
    #[error("check refers to unregistered metric: {0}")]
    UnknownMetricInSpec(#[from] MetricError),
    #[error("invalid check: {0}")]
    Invalid(String),
}

/// Serialized as `{"kind": ..., "metric": ..., "value": ..., "tol": ..., "baseline": ...}`
/// with only the fields a kind uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CheckSpec {
    Exists {
        metric: String,
    },
    /// Strict: equality fails.
    LessThan {
        metric: String,
        value: f64,
    },
    /// Strict: equality fails.
    GreaterThan {
        metric: String,
        value: f64,
    },
    /// `|x - value| <= tol`; with `tol == 0` only exact equality passes.
    CloseTo {
        metric: String,
        value: f64,
        tol: f64,
    },
    /// Strictly better, per the metric's direction, than the best passed run of `baseline`.
    ImprovedOver {
        metric: String,
        baseline: String,
    },
}

impl CheckSpec {
    pub fn exists(metric: impl Into<String>) -> Self {
        CheckSpec::Exists {
            metric: metric.into(),
        }
    }

    pub fn less_than(metric: impl Into<String>, value: f64) -> Self {
        CheckSpec::LessThan {
            metric: metric.into(),
            value,
        }
    }

    pub fn greater_than(metric: impl Into<String>, value: f64) -> Self {
        CheckSpec::GreaterThan {
            metric: metric.into(),
            value,
        }
    }

    pub fn close_to(metric: impl Into<String>, value: f64, tol: f64) -> Self {
        CheckSpec::CloseTo {
            metric: metric.into(),
            value,
            tol,
        }
    }

    pub fn improved_over(metric: impl Into<String>, baseline: impl Into<String>) -> Self {
        CheckSpec::ImprovedOver {
            metric: metric.into(),
            baseline: baseline.into(),
        }
    }

    pub fn metric(&self) -> &str {
        match self {
            CheckSpec::Exists { metric }
            | CheckSpec::LessThan { metric, .. }
            | CheckSpec::GreaterThan { metric, .. }
            | CheckSpec::CloseTo { metric, .. }
            | CheckSpec::ImprovedOver { metric, .. } => metric,
        }
    }

    /// Structural validity plus registry membership of the metric.
    pub fn validate(&self, registry: &MetricRegistry) -> Result<(), CheckError> {
        if self.metric().is_empty() {
            return Err(CheckError::Invalid("metric must be non-empty".into()));
        }
        match self {
            CheckSpec::CloseTo { tol, .. } if tol.is_nan() || *tol < 0.0 => {
                return Err(CheckError::Invalid(format!("tolerance must be >= 0, got {tol}")));
            }
            CheckSpec::ImprovedOver { baseline, .. } if baseline.is_empty() => {
                return Err(CheckError::Invalid("baseline step must be non-empty".into()));
            }
            _ => {}
        }
        registry.resolve(self.metric())?;
        Ok(())
    }
}

impl fmt::Display for CheckSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckSpec::Exists { metric } => write!(f, "{metric} exists"),
            CheckSpec::LessThan { metric, value } => write!(f, "{metric} < {value}"),
            CheckSpec::GreaterThan { metric, value } => write!(f, "{metric} > {value}"),
            CheckSpec::CloseTo { metric, value, tol } => write!(f, "|{metric} - {value}| <= {tol}"),
            CheckSpec::ImprovedOver { metric, baseline } => {
                write!(f, "{metric} improves on best passed run of `{baseline}`")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub passed: bool,
    pub message: String,
}

/// Metric values of passed runs, per step, for baseline comparisons.
pub trait RunHistory {
    /// `(run_id, value)` for every passed run of `step` that recorded `metric`.
    fn passed_values(&self, step: &str, metric: &str) -> Vec<(String, f64)>;
}

/// History with no runs.
pub struct NoHistory;

impl RunHistory for NoHistory {
    fn passed_values(&self, _step: &str, _metric: &str) -> Vec<(String, f64)> {
        Vec::new()
    }
}

impl<H: RunHistory + ?Sized> RunHistory for &H {
    fn passed_values(&self, step: &str, metric: &str) -> Vec<(String, f64)> {
        (**self).passed_values(step, metric)
    }
}

/// Evaluates one check against a run's metrics. Pure in its inputs.
pub fn evaluate_check(
    spec: &CheckSpec,
    run_metrics: &BTreeMap<String, f64>,
    registry: &MetricRegistry,
    history: &dyn RunHistory,
) -> Result<CheckOutcome, CheckError> {
    let def = registry.resolve(spec.metric())?;
    let metric = spec.metric();
    let outcome = |passed: bool, message: String| CheckOutcome {
        check: spec.to_string(),
        passed,
        message,
    };
    let Some(&x) = run_metrics.get(metric) else {
        return Ok(outcome(false, format!("{metric} was not recorded")));
    };
    let result = match spec {
        CheckSpec::Exists { .. } => outcome(true, format!("{metric} = {x}")),
        CheckSpec::LessThan { value, .. } => {
            outcome(x < *value, format!("{metric} = {x}, required < {value}"))
        }
        CheckSpec::GreaterThan { value, .. } => {
            outcome(x > *value, format!("{metric} = {x}, required > {value}"))
        }
        CheckSpec::CloseTo { value, tol, .. } => {
            let delta = (x - value).abs();
            outcome(
                delta <= *tol,
                format!("{metric} = {x}, target {value} ± {tol} (off by {delta})"),
            )
        }
        CheckSpec::ImprovedOver { baseline, .. } => {
            let best = history
                .passed_values(baseline, metric)
                .into_iter()
                .min_by(|a, b| def.direction.best_first(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
            match best {
                None => outcome(
                    false,
                    format!("baseline step `{baseline}` has no passed run recording {metric}"),
                ),
                Some((_, reference)) => outcome(
                    def.direction.improves(x, reference),
                    format!("{metric} = {x}, best baseline {reference}, {:?}", def.direction),
                ),
            }
        }
    };
    Ok(result)
}
