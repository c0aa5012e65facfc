use std::collections::BTreeMap;

use super::fingerprint::Fingerprint;
use crate::project::StepState;

/// Persisted view of one step: its base state and the fingerprint of its latest run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub state: StepState,
    pub latest_fingerprint: Option<Fingerprint>,
}

/// Overlays `Stale` on every `Passed`/`Failed` step whose latest run fingerprint
/// differs from `current`. A step missing from `current` (sources unreadable)
/// counts as changed. Per-step: successors are not touched.
pub fn mark_staleness(
    steps: &BTreeMap<String, StepSnapshot>,
    current: &BTreeMap<String, Fingerprint>,
) -> BTreeMap<String, StepState> {
    steps
        .iter()
        .map(|(name, snap)| {
            let state = match snap.state {
                StepState::Passed | StepState::Failed => {
                    let unchanged = match (&snap.latest_fingerprint, current.get(name)) {
                        (Some(recorded), Some(now)) => recorded.matches(now),
                        _ => false,
                    };
                    if unchanged {
                        snap.state
                    } else {
                        StepState::Stale
                    }
                }
                other => other,
            };
            (name.clone(), state)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::fingerprint::fingerprint_sources;

    fn fp(content: &str) -> Fingerprint {
        fingerprint_sources(&[("src", content)]).unwrap()
    }

    fn snapshots() -> BTreeMap<String, StepSnapshot> {
        [
            ("a", StepState::Passed, Some(fp("a"))),
            ("b", StepState::Failed, Some(fp("b"))),
            ("c", StepState::NotStarted, None),
        ]
        .into_iter()
        .map(|(n, state, f)| {
            (
                n.to_string(),
                StepSnapshot {
                    state,
                    latest_fingerprint: f,
                },
            )
        })
        .collect()
    }

    fn current(a: &str, b: &str, c: &str) -> BTreeMap<String, Fingerprint> {
        [("a", fp(a)), ("b", fp(b)), ("c", fp(c))]
            .into_iter()
            .map(|(n, f)| (n.to_string(), f))
            .collect()
    }

    #[test]
    fn unchanged_sources_keep_states() {
        let out = mark_staleness(&snapshots(), &current("a", "b", "c"));
        assert_eq!(out["a"], StepState::Passed);
        assert_eq!(out["b"], StepState::Failed);
        assert_eq!(out["c"], StepState::NotStarted);
    }

    #[test]
    fn edited_step_goes_stale_alone() {
        let out = mark_staleness(&snapshots(), &current("a2", "b", "c"));
        assert_eq!(out["a"], StepState::Stale);
        assert_eq!(out["b"], StepState::Failed);
    }

    #[test]
    fn failed_step_can_go_stale() {
        let out = mark_staleness(&snapshots(), &current("a", "b2", "c"));
        assert_eq!(out["b"], StepState::Stale);
    }

    #[test]
    fn not_started_never_stale() {
        let out = mark_staleness(&snapshots(), &current("a", "b", "changed"));
        assert_eq!(out["c"], StepState::NotStarted);
        let out = mark_staleness(&snapshots(), &BTreeMap::new());
        assert_eq!(out["c"], StepState::NotStarted);
        assert_eq!(out["a"], StepState::Stale);
    }

    #[test]
    fn idempotent() {
        let now = current("a2", "b", "c");
        let once = mark_staleness(&snapshots(), &now);
        let again_input: BTreeMap<String, StepSnapshot> = snapshots()
            .into_iter()
            .map(|(n, s)| {
                let state = once[&n];
                (n, StepSnapshot { state, ..s })
            })
            .collect();
        assert_eq!(mark_staleness(&again_input, &now), once);
    }
}
