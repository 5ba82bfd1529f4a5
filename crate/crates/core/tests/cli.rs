use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use objectalign::feature::{load_video, save_video};
use objectalign::harness::edited_video;
use objectalign::{Report, Thresholds, Video};

fn objectalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objectalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bench_then_manual_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    let events = r#"[{"kind":"embedding_drift","start":20,"length":3},{"kind":"color_shift","start":50,"length":2},{"kind":"prop_flip","start":70,"length":1}]"#;
    let out = objectalign(&["bench", "--frames", "100", "--events", events, "--seed", "7", "--out", p(&bench)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Converged"), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("smt")), "{stdout}");
    for name in [
        "clean.jsonl",
        "corrupted.jsonl",
        "corrected.jsonl",
        "thresholds.json",
        "tolerances.json",
        "ground_truth.json",
        "report.json",
        "scores.json",
    ] {
        assert!(bench.join(name).exists(), "{name} missing");
    }

    // events from a file give the same scores
    let events_file = dir.path().join("events.json");
    fs::write(&events_file, events).unwrap();
    let again = dir.path().join("again");
    let out = objectalign(&["bench", "--frames", "100", "--events", p(&events_file), "--seed", "7", "--out", p(&again)]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read_to_string(bench.join("scores.json")).unwrap(),
        fs::read_to_string(again.join("scores.json")).unwrap()
    );

    let clean = bench.join("clean.jsonl");
    let corrupted = bench.join("corrupted.jsonl");
    let edited = dir.path().join("edited.jsonl");
    let clean_frames: Video = load_video(&clean).unwrap();
    save_video(&edited, &edited_video(&clean_frames, 3)).unwrap();

    let tau = dir.path().join("tau.json");
    let out = objectalign(&["learn", "--positives", p(&clean), "--negatives", p(&edited), "--lambda", "50", "--out", p(&tau)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let learned: Thresholds = serde_json::from_str(&fs::read_to_string(&tau).unwrap()).unwrap();
    assert_eq!(learned.lambda, 50.0);

    let spec = dir.path().join("spec.ltl");
    fs::write(&spec, "G visible\n").unwrap();
    let report_path = dir.path().join("report.json");
    let checks = ["--thresholds", p(&tau), "--calibrate", p(&clean), "--spec", p(&spec), "--sat-threshold", "0.5"];
    let mut args = vec!["verify", "--video", p(&corrupted), "--report", p(&report_path)];
    args.extend(checks);
    let out = objectalign(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Report = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(!report.inconsistent.is_empty());

    let repaired = dir.path().join("repaired.jsonl");
    let out = objectalign(&["repair", "--video", p(&corrupted), "--report", p(&report_path), "--out", p(&repaired)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_video::<f64>(&repaired).unwrap().len(), 100);

    let reports = dir.path().join("reports");
    let fixed = dir.path().join("fixed.jsonl");
    let mut args = vec!["run", "--video", p(&corrupted), "--out", p(&fixed), "--report-dir", p(&reports)];
    args.extend(checks);
    let out = objectalign(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(reports.join("report_000.json").exists());
    assert!(reports.join("report_001.json").exists());

    let out = objectalign(&["check-spec", "--spec", p(&spec), "--video", p(&clean)]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "1");
    let out = objectalign(&["check-spec", "--spec", p(&spec), "--video", p(&corrupted)]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0");
    let out = objectalign(&["check-spec", "--spec", p(&spec), "--video", p(&clean), "--thresholds", p(&tau)]);
    let psi: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(psi > 0.0 && psi <= 1.0, "{psi}");

    // every transition of the edited video fails against the clean calibration
    let mut args = vec!["run", "--video", p(&edited), "--out", p(&fixed)];
    args.extend(&checks[..4]);
    let out = objectalign(&args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = objectalign(&[
        "verify", "--video", p(&missing), "--thresholds", "t.json", "--eps-s", "0.1", "--eps-bg", "0.1", "--report", "r.json",
    ]);
    assert_eq!(code(&out), 1);
    let out = objectalign(&["verify", "--video", "v.jsonl", "--thresholds", "t.json", "--eps-s", "0.1", "--report", "r.json"]);
    assert_eq!(code(&out), 1, "a lone --eps-s is a usage error");
    let out = objectalign(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    let out = objectalign(&["bench", "--frames", "10", "--events", "[{\"kind\":\"nope\"}]", "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = objectalign(&["--help"]);
    assert_eq!(code(&out), 0);
}
