use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::BlobsSpec;
use crate::checks::{CheckOutcome, CheckSpec};
use crate::metrics::MetricRegistry;
use crate::tracking::Fingerprint;

/// Flat config / event-data value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Scalar::Int(i) => Some(i as f64),
            Scalar::Float(f) => Some(f),
            _ => None,
        }
    }

    /// Non-negative integers, including integral floats such as `2000.0`.
    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            Scalar::Int(i) => u64::try_from(i).ok(),
            Scalar::Float(f) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => {
                Some(f as u64)
            }
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Scalar::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<usize> for Scalar {
    fn from(v: usize) -> Self {
        Scalar::Int(v as i64)
    }
}

impl From<u64> for Scalar {
    fn from(v: u64) -> Self {
        i64::try_from(v).map_or(Scalar::Float(v as f64), Scalar::Int)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

pub type Config = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    AnalyzeData,
    CheckLossOnInit,
    OverfitOneBatch,
    Regularize,
    TransferLearning,
    Custom,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Lifecycle of a step. `Stale` is an overlay over `Passed`/`Failed` computed
/// from fingerprints; it is never written to the state file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepState {
    NotStarted,
    Running,
    Passed,
    Failed,
    Stale,
}

impl StepState {
    pub fn token(self) -> &'static str {
        match self {
            StepState::NotStarted => "NotStarted",
            StepState::Running => "Running",
            StepState::Passed => "Passed",
            StepState::Failed => "Failed",
            StepState::Stale => "Stale",
        }
    }
}

impl fmt::Display for StepState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for StepState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "NotStarted" => StepState::NotStarted,
            "Running" => StepState::Running,
            "Passed" => StepState::Passed,
            "Failed" => StepState::Failed,
            "Stale" => StepState::Stale,
            other => return Err(format!("unknown step state `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRef {
    /// File path; relative paths resolve against the directory containing the store.
    Path(PathBuf),
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchedSource {
    pub label: String,
    #[serde(flatten)]
    pub source: SourceRef,
}

impl WatchedSource {
    pub fn path(label: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            label: label.into(),
            source: SourceRef::Path(path.into()),
        }
    }

    pub fn inline(label: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            source: SourceRef::Inline(content.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDescriptor {
    pub name: String,
    pub kind: StepKind,
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub config: Config,
    #[serde(default)]
    pub watched_sources: Vec<WatchedSource>,
}

impl StepDescriptor {
    pub fn new(name: impl Into<String>, kind: StepKind) -> Self {
        Self {
            name: name.into(),
            kind,
            checks: Vec::new(),
            config: Config::new(),
            watched_sources: Vec::new(),
        }
    }

    pub fn check(mut self, check: CheckSpec) -> Self {
        self.checks.push(check);
        self
    }

    pub fn set(mut self, key: &str, value: impl Into<Scalar>) -> Self {
        self.config.insert(key.to_string(), value.into());
        self
    }

    pub fn watch(mut self, source: WatchedSource) -> Self {
        self.watched_sources.push(source);
        self
    }
}

/// Persisted as `project.json`. `store_root` is where it was loaded from, not serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub name: String,
    pub steps: Vec<StepDescriptor>,
    pub metric_registry: MetricRegistry,
    /// Synthetic task the built-in recipe steps run on when driven from the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<BlobsSpec>,
    #[serde(skip)]
    pub store_root: PathBuf,
}

impl ProjectManifest {
    pub fn step(&self, name: &str) -> Option<&StepDescriptor> {
        self.steps.iter().find(|s| s.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.name == name)
    }
}

const RUN_TS_FORMAT: &str = "%Y%m%dT%H%M%SZ";

/// `YYYYMMDDTHHMMSSZ-NNNN`: sorts lexicographically in creation order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(String);

impl RunId {
    /// Next id after `last` at wall-clock time `now`. The timestamp never goes
    /// backwards; the counter disambiguates runs within one second.
    pub fn next(now: DateTime<Utc>, last: Option<&RunId>) -> RunId {
        let mut ts = now.naive_utc();
        let mut counter = 0u32;
        if let Some((last_ts, last_counter)) = last.and_then(RunId::parts) {
            let now_s = ts.format(RUN_TS_FORMAT).to_string();
            let last_s = last_ts.format(RUN_TS_FORMAT).to_string();
            if now_s <= last_s {
                ts = last_ts;
                counter = last_counter + 1;
                if counter > 9999 {
                    ts += Duration::seconds(1);
                    counter = 0;
                }
            }
        }
        RunId(format!("{}-{counter:04}", ts.format(RUN_TS_FORMAT)))
    }

    fn parts(&self) -> Option<(NaiveDateTime, u32)> {
        let (ts, counter) = self.0.split_once('-')?;
        let ts = NaiveDateTime::parse_from_str(ts, RUN_TS_FORMAT).ok()?;
        Some((ts, counter.parse().ok()?))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        self.parts().is_some() && self.0.len() == 21
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for RunId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let id = RunId(s.to_string());
        if id.is_well_formed() {
            Ok(id)
        } else {
            Err(format!("malformed run id `{s}`"))
        }
    }
}

/// One execution of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: RunId,
    pub step_name: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub seed: u64,
    pub config: Config,
    /// `<stage>/<name>` → value.
    pub metrics: BTreeMap<String, f64>,
    pub fingerprint: Fingerprint,
    pub check_outcomes: Vec<CheckOutcome>,
    pub final_state: StepState,
    /// Ran with gating bypassed.
    #[serde(default)]
    pub forced: bool,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.final_state == StepState::Passed
    }

    pub fn checks_passed(&self) -> usize {
        self.check_outcomes.iter().filter(|c| c.passed).count()
    }

    /// Pretty JSON with sorted keys: the on-disk form.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("run record is serializable");
        let mut s = serde_json::to_string_pretty(&value).expect("json value is serializable");
        s.push('\n');
        s
    }

    /// On-disk form with run id and timestamps blanked, for comparing reruns.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("run record is serializable");
        if let Some(obj) = value.as_object_mut() {
            for key in ["run_id", "started_at", "finished_at"] {
                obj.insert(key.to_string(), serde_json::Value::Null);
            }
        }
        serde_json::to_string_pretty(&value).expect("json value is serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn scalar_json_shapes() {
        let cfg: Config = serde_json::from_str(r#"{"lr": 0.5, "max_iters": 2000, "name": "x", "on": true, "one": 1.0}"#)
            .unwrap();
        assert_eq!(cfg["lr"], Scalar::Float(0.5));
        assert_eq!(cfg["max_iters"], Scalar::Int(2000));
        assert_eq!(cfg["name"], Scalar::Str("x".into()));
        assert_eq!(cfg["on"], Scalar::Bool(true));
        assert_eq!(cfg["one"], Scalar::Float(1.0));
        let back: Config = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(Scalar::Float(2000.0).as_u64(), Some(2000));
        assert_eq!(Scalar::Float(0.5).as_u64(), None);
    }

    #[test]
    fn state_tokens_round_trip() {
        for s in [
            StepState::NotStarted,
            StepState::Running,
            StepState::Passed,
            StepState::Failed,
            StepState::Stale,
        ] {
            assert_eq!(s.token().parse::<StepState>().unwrap(), s);
        }
        assert!("passed".parse::<StepState>().is_err());
    }

    #[test]
    fn run_ids_sort_in_creation_order() {
        let t0 = Utc.with_ymd_and_hms(2026, 10, 15, 23, 39, 0).unwrap();
        let a = RunId::next(t0, None);
        assert_eq!(a.as_str(), "20261015T233900Z-0000");
        let b = RunId::next(t0, Some(&a));
        assert_eq!(b.as_str(), "20261015T233900Z-0001");
        // Clock going backwards still yields a later id.
        let c = RunId::next(t0 - Duration::hours(1), Some(&b));
        assert_eq!(c.as_str(), "20261015T233900Z-0002");
        let d = RunId::next(t0 + Duration::seconds(5), Some(&c));
        assert_eq!(d.as_str(), "20261015T233905Z-0000");
        assert!(a < b && b < c && c < d);
        assert!(d.is_well_formed());
    }

    #[test]
    fn counter_overflow_bumps_second() {
        let t0 = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
        let last: RunId = "20260101T000000Z-9999".parse().unwrap();
        let next = RunId::next(t0, Some(&last));
        assert_eq!(next.as_str(), "20260101T000001Z-0000");
        assert!(last < next);
    }

    #[test]
    fn watched_source_json() {
        let w = WatchedSource::path("model", "src/model.py");
        assert_eq!(
            serde_json::to_value(&w).unwrap(),
            serde_json::json!({"label": "model", "path": "src/model.py"})
        );
        let i: WatchedSource = serde_json::from_str(r#"{"label": "cfg", "inline": "x=1"}"#).unwrap();
        assert_eq!(i, WatchedSource::inline("cfg", "x=1"));
    }
}
