use std::cell::RefCell;

use objectalign::engine::InconsistentRun;
use objectalign::harness::{clean_video, edited_video, inject_inconsistencies, EventKind, Fixture, InjectedEvent, SyntheticConfig};
use objectalign::pipeline::{run_loop, LoopStatus, PipelineConfig};
use objectalign::repair::{
    execute_repairs, plan_runs, BuiltinInterpolator, Capability, ExecInterpolator, InterpolationRequest, Interpolator,
    RepairError, Strategy,
};
use objectalign::{Error, Frame};

// copies anchor_prev into each slot with the right index
const COPY_PREV: &str = r#"python3 -c '
import json, sys
req = json.load(sys.stdin)
a = req["anchor_prev"]
json.dump({"frames": [dict(a, frame=a["frame"] + 1 + i) for i in range(req["count"])]}, sys.stdout)
'"#;

fn video(n: usize) -> Vec<Frame> {
    clean_video(&SyntheticConfig::with_frames(n), 21)
}

fn interior_plan(n: usize) -> Vec<objectalign::repair::RepairAction> {
    plan_runs(&[InconsistentRun::new(3, 5)], n).unwrap().actions
}

#[test]
fn exec_interpolator_round_trip() {
    let v = video(10);
    let exec = ExecInterpolator::new(COPY_PREV);
    assert_eq!(Interpolator::<f64>::capability(&exec), Capability::PixelSpace);
    let out = execute_repairs(&v, &interior_plan(10), &exec).unwrap();
    for i in 3..=5 {
        assert_eq!(out[i].frame_index, i);
        assert_eq!(out[i].clip_embedding, v[2].clip_embedding);
    }
    for i in (0..3).chain(6..10) {
        assert_eq!(out[i], v[i]);
    }
}

#[test]
fn exec_interpolator_failures() {
    let v = video(10);
    let plan = interior_plan(10);
    let short = r#"python3 -c '
import json, sys
req = json.load(sys.stdin)
a = req["anchor_prev"]
json.dump({"frames": [dict(a, frame=a["frame"] + 1)]}, sys.stdout)
'"#;
    assert!(matches!(
        execute_repairs(&v, &plan, &ExecInterpolator::new(short)),
        Err(RepairError::WrongCount { expected: 3, got: 1 })
    ));
    let err = execute_repairs(&v, &plan, &ExecInterpolator::new("echo boom >&2; exit 4")).unwrap_err();
    assert!(matches!(err, RepairError::Process { .. }));
    assert!(err.to_string().contains("boom"), "{err}");
    assert!(matches!(
        execute_repairs(&v, &plan, &ExecInterpolator::new("cat >/dev/null; echo not json")),
        Err(RepairError::Protocol(_))
    ));
    let misnumbered = r#"python3 -c '
import json, sys
req = json.load(sys.stdin)
a = req["anchor_prev"]
json.dump({"frames": [a] * req["count"]}, sys.stdout)
'"#;
    assert!(matches!(
        execute_repairs(&v, &plan, &ExecInterpolator::new(misnumbered)),
        Err(RepairError::WrongIndex { expected: 3, got: 2 })
    ));
    let unnormalized = r#"python3 -c '
import json, sys
req = json.load(sys.stdin)
a = req["anchor_prev"]
json.dump({"frames": [dict(a, frame=a["frame"] + 1 + i, hist=[2.0] * len(a["hist"])) for i in range(req["count"])]}, sys.stdout)
'"#;
    assert!(matches!(
        execute_repairs(&v, &plan, &ExecInterpolator::new(unnormalized)),
        Err(RepairError::InvalidFrame(_))
    ));
}

#[test]
fn request_wire_format() {
    let v = video(3);
    let req = InterpolationRequest {
        anchor_prev: v[0].clone(),
        anchor_next: v[2].clone(),
        count: 1,
        depth: 1,
    };
    let json = serde_json::to_value(&req).unwrap();
    let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["anchor_next", "anchor_prev", "count", "depth"]);
    assert_eq!(json["anchor_next"]["frame"], 2);
}

struct Recording {
    calls: RefCell<Vec<(usize, usize, usize)>>,
}

impl Interpolator<f64> for Recording {
    fn capability(&self) -> Capability {
        Capability::FeatureSpace
    }

    fn interpolate(&self, r: &InterpolationRequest<f64>) -> Result<Vec<Frame>, RepairError> {
        self.calls
            .borrow_mut()
            .push((r.anchor_prev.frame_index, r.anchor_next.frame_index, r.count));
        BuiltinInterpolator.interpolate(r)
    }
}

#[test]
fn replacement_contract() {
    let v = video(20);
    let plan = plan_runs(&[InconsistentRun::new(0, 1), InconsistentRun::new(6, 8), InconsistentRun::new(15, 18)], 20).unwrap();
    assert!(!plan.anchor_property);
    let strategies: Vec<_> = plan.actions.iter().map(|a| a.strategy).collect();
    assert_eq!(strategies, [Strategy::ReplicateNearest, Strategy::Interpolate, Strategy::ReplicateNearest]);
    let rec = Recording {
        calls: RefCell::new(Vec::new()),
    };
    let out = execute_repairs(&v, &plan.actions, &rec).unwrap();
    assert_eq!(*rec.calls.borrow(), [(5, 9, 3)]);
    // head run: frames 0..=1 copy anchor 2; tail run: frames 15..=19 copy anchor 14
    for i in 0..=1 {
        assert_eq!(out[i].clip_embedding, v[2].clip_embedding);
    }
    for i in 15..20 {
        assert_eq!(out[i].clip_embedding, v[14].clip_embedding);
        assert_eq!(out[i].frame_index, i);
    }
    for i in (2..6).chain(9..15) {
        assert_eq!(out[i], v[i]);
    }
}

fn fixture_config(f: &Fixture) -> PipelineConfig {
    PipelineConfig::new(f.thresholds, f.tolerances).with_temporal(Fixture::temporal_check())
}

#[test]
fn consistent_video_needs_no_repair() {
    let f = Fixture::calibrated(SyntheticConfig::with_frames(60), 4).unwrap();
    let v = clean_video(&f.config, 4);
    let result = run_loop(v.clone(), &fixture_config(&f), &BuiltinInterpolator).unwrap();
    assert_eq!(result.status, LoopStatus::Converged);
    assert_eq!(result.repair_passes(), 0);
    assert_eq!(result.video, v);
    assert_eq!(result.reports.len(), 1);
}

#[test]
fn iteration_cap_and_monotone_progress() {
    let f = Fixture::calibrated(SyntheticConfig::with_frames(80), 6).unwrap();
    let clean = clean_video(&f.config, 6);
    let events = [
        InjectedEvent::new(EventKind::EmbeddingDrift, 10, 4),
        InjectedEvent::new(EventKind::MaskJitter, 30, 3),
        InjectedEvent::new(EventKind::ColorShift, 50, 5),
        InjectedEvent::new(EventKind::PerceptualNoise, 70, 2),
    ];
    let (bad, _) = inject_inconsistencies(&clean, &events, &f.scale(), 7).unwrap();

    let capped = run_loop(bad.clone(), &fixture_config(&f).with_max_iterations(1), &BuiltinInterpolator).unwrap();
    assert!(capped.repair_passes() <= 1);
    assert!(matches!(capped.status, LoopStatus::Converged | LoopStatus::MaxIterations));

    let full = run_loop(bad, &fixture_config(&f), &BuiltinInterpolator).unwrap();
    assert_eq!(full.status, LoopStatus::Converged);
    for (i, r) in full.reports.iter().enumerate() {
        assert_eq!(r.iteration, i);
    }
    let sizes: Vec<usize> = full.reports.iter().map(|r| r.inconsistent.len()).collect();
    assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
    assert!(full.final_report().is_consistent());

    assert!(matches!(
        run_loop(clean, &fixture_config(&f).with_max_iterations(0), &BuiltinInterpolator),
        Err(Error::Config(_))
    ));
}

#[test]
fn fully_edited_video_has_no_anchors() {
    let f = Fixture::calibrated(SyntheticConfig::with_frames(30), 2).unwrap();
    let edited = edited_video(&clean_video(&f.config, 2), 2);
    let result = run_loop(edited, &fixture_config(&f), &BuiltinInterpolator).unwrap();
    assert_eq!(result.status, LoopStatus::NoAnchors);
    assert_eq!(result.status.exit_code(), 3);
    assert_eq!(result.repair_passes(), 0);
}

#[test]
fn interpolator_failure_names_the_pass() {
    let f = Fixture::calibrated(SyntheticConfig::with_frames(40), 3).unwrap();
    let clean = clean_video(&f.config, 3);
    let (bad, _) =
        inject_inconsistencies(&clean, &[InjectedEvent::new(EventKind::ColorShift, 10, 3)], &f.scale(), 1).unwrap();
    let err = run_loop(bad, &fixture_config(&f), &ExecInterpolator::new("exit 1")).unwrap_err();
    assert!(matches!(err, Error::RepairPass { iteration: 1, .. }), "{err}");
}
