use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use ndarray::Array2;
use proptest::prelude::*;

use stagecheck_core::backend::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};
use stagecheck_core::backend::model::softmax_cross_entropy;
use stagecheck_core::backend::{evaluate, loss_and_grad, DatasetSplit, InitScheme, Params};
use stagecheck_core::checks::NoHistory;
use stagecheck_core::metrics::classification_metrics;
use stagecheck_core::tracking::{fingerprint_sources, mark_staleness, StepSnapshot};
use stagecheck_core::{
    compare_runs, evaluate_check, CheckSpec, Direction, MetricDef, MetricRegistry, MetricStage,
    RunHistory, RunId, RunRecord, StageScope, StepState,
};

fn registry(direction: Direction) -> MetricRegistry {
    let mut r = MetricRegistry::new();
    r.register(MetricDef::new("score", direction, StageScope::Both)).unwrap();
    r
}

fn run(i: usize, value: f64) -> RunRecord {
    let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    RunRecord {
        run_id: format!("20240101T000000Z-{i:04}").parse().unwrap(),
        step_name: "s".into(),
        started_at: t,
        finished_at: t,
        seed: 0,
        config: BTreeMap::new(),
        metrics: [("validation/score".to_string(), value)].into_iter().collect(),
        fingerprint: fingerprint_sources::<&str, &str>(&[]).unwrap(),
        check_outcomes: vec![],
        final_state: StepState::Passed,
        forced: false,
    }
}

struct Baseline(Vec<(String, f64)>);

impl RunHistory for Baseline {
    fn passed_values(&self, step: &str, _metric: &str) -> Vec<(String, f64)> {
        if step == "base" {
            self.0.clone()
        } else {
            vec![]
        }
    }
}

fn metrics(value: f64) -> BTreeMap<String, f64> {
    [("validation/score".to_string(), value)].into_iter().collect()
}

fn small_batch(d: usize, c: usize, n: usize, seed: u64) -> DatasetSplit {
    let mut rng = stagecheck_core::rng::SplitMix64::new(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.gaussian());
    let labels = (0..n).map(|_| rng.below(c)).collect();
    DatasetSplit::new(x, labels, c).unwrap()
}

proptest! {
    #[test]
    fn compare_runs_ignores_input_order(
        values in prop::collection::vec(-1e3f64..1e3, 1..12),
        shuffle_seed in any::<u64>(),
    ) {
        let reg = registry(Direction::HigherIsBetter);
        let runs: Vec<RunRecord> = values.iter().enumerate().map(|(i, v)| run(i, *v)).collect();
        let mut shuffled = runs.clone();
        stagecheck_core::rng::SplitMix64::new(shuffle_seed).shuffle(&mut shuffled);
        prop_assert_eq!(
            compare_runs(&runs, "validation/score", &reg).unwrap(),
            compare_runs(&shuffled, "validation/score", &reg).unwrap()
        );
    }

    #[test]
    fn compare_runs_reverses_with_direction(
        values in prop::collection::btree_set(-1_000_000i64..1_000_000, 1..12),
    ) {
        let runs: Vec<RunRecord> = values.iter().enumerate().map(|(i, v)| run(i, *v as f64)).collect();
        let up = compare_runs(&runs, "validation/score", &registry(Direction::HigherIsBetter)).unwrap();
        let mut down = compare_runs(&runs, "validation/score", &registry(Direction::LowerIsBetter)).unwrap();
        down.reverse();
        prop_assert_eq!(up.clone(), down);
        prop_assert!(up.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn evaluate_check_is_pure(x in -10f64..10.0, t in -10f64..10.0, base in -10f64..10.0) {
        let reg = registry(Direction::LowerIsBetter);
        let hist = Baseline(vec![("r".into(), base)]);
        for spec in [
            CheckSpec::less_than("validation/score", t),
            CheckSpec::greater_than("validation/score", t),
            CheckSpec::close_to("validation/score", t, 0.5),
            CheckSpec::improved_over("validation/score", "base"),
        ] {
            let a = evaluate_check(&spec, &metrics(x), &reg, &hist).unwrap();
            let b = evaluate_check(&spec, &metrics(x), &reg, &hist).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn improved_over_survives_negation_and_flip(
        x in -10f64..10.0,
        base in prop::collection::vec(-10f64..10.0, 1..5),
        higher in any::<bool>(),
    ) {
        let dir = if higher { Direction::HigherIsBetter } else { Direction::LowerIsBetter };
        let spec = CheckSpec::improved_over("validation/score", "base");
        let hist: Vec<_> = base.iter().enumerate().map(|(i, v)| (i.to_string(), *v)).collect();
        let negated: Vec<_> = hist.iter().map(|(k, v)| (k.clone(), -v)).collect();
        let a = evaluate_check(&spec, &metrics(x), &registry(dir), &Baseline(hist)).unwrap();
        let b = evaluate_check(&spec, &metrics(-x), &registry(dir.reversed()), &Baseline(negated)).unwrap();
        prop_assert_eq!(a.passed, b.passed);
    }

    #[test]
    fn close_to_zero_tolerance_is_equality(x in -5f64..5.0, y in -5f64..5.0, same in any::<bool>()) {
        let y = if same { x } else { y };
        let reg = registry(Direction::HigherIsBetter);
        let out = evaluate_check(&CheckSpec::close_to("validation/score", y, 0.0), &metrics(x), &reg, &NoHistory).unwrap();
        prop_assert_eq!(out.passed, x == y);
    }

    #[test]
    fn fingerprint_ignores_source_order(
        sources in prop::collection::btree_map("[a-z]{1,6}", prop::collection::vec(any::<u8>(), 0..40), 1..6),
        shuffle_seed in any::<u64>(),
    ) {
        let list: Vec<(String, Vec<u8>)> = sources.into_iter().collect();
        let mut shuffled = list.clone();
        stagecheck_core::rng::SplitMix64::new(shuffle_seed).shuffle(&mut shuffled);
        prop_assert_eq!(
            fingerprint_sources(&list).unwrap().digest,
            fingerprint_sources(&shuffled).unwrap().digest
        );
    }

    #[test]
    fn fingerprint_sees_any_byte_flip(
        content in prop::collection::vec(any::<u8>().prop_filter("no CR", |b| *b != b'\r'), 1..64),
        pos in any::<prop::sample::Index>(),
        xor in 1u8..=255,
    ) {
        let i = pos.index(content.len());
        let mut edited = content.clone();
        edited[i] ^= xor;
        prop_assume!(!edited.contains(&b'\r'));
        prop_assert_ne!(
            fingerprint_sources(&[("src", &content)]).unwrap().digest,
            fingerprint_sources(&[("src", &edited)]).unwrap().digest
        );
    }

    #[test]
    fn staleness_marking_is_idempotent(
        states in prop::collection::vec(0u8..4, 1..6),
        changed in prop::collection::vec(any::<bool>(), 6),
    ) {
        let fp = |s: &str| fingerprint_sources(&[("x", s)]).unwrap();
        let tokens = [StepState::NotStarted, StepState::Passed, StepState::Failed, StepState::Running];
        let mut snaps = BTreeMap::new();
        let mut current = BTreeMap::new();
        for (i, s) in states.iter().enumerate() {
            let name = format!("s{i}");
            snaps.insert(name.clone(), StepSnapshot { state: tokens[*s as usize], latest_fingerprint: Some(fp("a")) });
            current.insert(name, fp(if changed[i] { "b" } else { "a" }));
        }
        let once = mark_staleness(&snaps, &current);
        let reapplied: BTreeMap<_, _> = once
            .iter()
            .map(|(k, v)| {
                (k.clone(), StepSnapshot { state: *v, latest_fingerprint: snaps[k].latest_fingerprint.clone() })
            })
            .collect();
        prop_assert_eq!(mark_staleness(&reapplied, &current), once.clone());
        for (k, v) in &once {
            if snaps[k].state == StepState::NotStarted {
                prop_assert_eq!(*v, StepState::NotStarted);
            }
        }
    }

    #[test]
    fn run_ids_sort_in_creation_order(offsets in prop::collection::vec(-5i64..5, 1..30)) {
        let start = Utc.with_ymd_and_hms(2024, 6, 1, 12, 0, 0).unwrap();
        let mut last: Option<RunId> = None;
        let mut clock = start;
        for off in offsets {
            clock += chrono::Duration::seconds(off);
            let id = RunId::next(clock, last.as_ref());
            prop_assert!(id.is_well_formed());
            if let Some(prev) = &last {
                prop_assert!(prev < &id);
            }
            last = Some(id);
        }
    }

    #[test]
    fn classification_metrics_are_in_range(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50),
        loss in 0f64..20.0,
    ) {
        let (pred, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let values = classification_metrics(MetricStage::Validation, &pred, &truth, loss).unwrap();
        for v in values {
            prop_assert!(v.value >= 0.0);
            if v.name == "accuracy" {
                prop_assert!(v.value <= 1.0);
            }
        }
    }

    #[test]
    fn softmax_loss_finite_for_large_logits(
        logits in prop::collection::vec(-1e3f64..1e3, 6),
        labels in prop::collection::vec(0usize..3, 2),
    ) {
        let z = Array2::from_shape_vec((2, 3), logits).unwrap();
        let (mean, grad) = softmax_cross_entropy(&z, &labels);
        prop_assert!(mean.is_finite() && mean >= 0.0);
        prop_assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let batch = small_batch(3, 3, 8, seed);
        let p = Params::init(3, 4, 3, InitScheme::Uniform(1.0), seed);
        prop_assert_eq!(evaluate(&p, &batch).unwrap(), evaluate(&p, &batch).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn analytic_gradient_matches_finite_differences(
        d in 1usize..=5,
        h in 1usize..=5,
        c in 1usize..=5,
        n in 1usize..=6,
        l2 in prop_oneof![Just(0.0), 0.0f64..0.1],
        seed in any::<u64>(),
    ) {
        let batch = small_batch(d, c, n, seed);
        let p = Params::init(d, h, c, InitScheme::Uniform(1.0), seed ^ 0x5eed);
        let (_, analytic) = loss_and_grad(&p, &batch, l2).unwrap();
        let numeric = finite_diff_grad(&p, &batch, l2, DEFAULT_STEP).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        prop_assert!(err <= 1e-4, "max relative error {err:e} (d={d}, h={h}, C={c}, n={n})");
    }
}
