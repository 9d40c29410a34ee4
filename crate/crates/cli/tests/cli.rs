use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dtsforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtsforge"))
        .args(args)
        .env("DTSFORGE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dtsforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn per_stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cohort = d.join("cohort");
    ok(&["phantom-cohort", "--normal", "1", "--abnormal", "1", "--seed", "7", "--out-dir", s(&cohort)]);
    let truth = fs::read_to_string(cohort.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 3);

    let case = cohort.join("case_000");
    let stripped = d.join("stripped.json");
    let mask = d.join("subject.json");
    ok(&["strip-bed", "--in", s(&case.join("ct.json")), "--out", s(&stripped), "--mask-out", s(&mask), "--threshold", "-500"]);
    let resampled = d.join("resampled.json");
    ok(&["resample", "--in", s(&stripped), "--out", s(&resampled), "--target", "4"]);
    let lung = d.join("lung.json");
    ok(&["resample", "--in", s(&case.join("lung_truth.json")), "--out", s(&lung), "--target", "4", "--binary"]);

    let views = d.join("views");
    let masks = d.join("masks");
    let display = d.join("display");
    ok(&[
        "project", "--in", s(&resampled), "--views", "-30,0,30", "--pixels", "64,64", "--out-dir", s(&views),
        "--mask-in", s(&lung), "--mask-out-dir", s(&masks), "--display-dir", s(&display), "--display-pixels", "64,64",
    ]);
    for stem in ["view_-30", "view_+0", "view_+30"] {
        assert!(views.join(format!("{stem}.pgm")).is_file());
        assert!(views.join(format!("{stem}.json")).is_file());
        assert!(masks.join(format!("{stem}.pgm")).is_file());
    }
    let masks2 = d.join("masks2");
    ok(&["project-mask", "--in", s(&lung), "--views", "-30,0,30", "--pixels", "64,64", "--out-dir", s(&masks2)]);
    let eval = ok(&["seg-eval", "--pred", s(&masks.join("view_+0.pgm")), "--ref", s(&masks2.join("view_+0.pgm"))]);
    assert!(eval.contains("dice\t1.000000"), "{eval}");

    let preds = d.join("preds.csv");
    let acts = d.join("acts");
    ok(&[
        "score", "--views-dir", s(&views), "--masks-dir", s(&masks), "--patient", "case_000", "--out", s(&preds),
        "--activations-dir", s(&acts),
    ]);
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 4);

    let overlay = d.join("overlay.ppm");
    ok(&[
        "refine-cam", "--act", s(&acts.join("view_+0.act")), "--mask", s(&masks.join("view_+0.pgm")),
        "--base", s(&display.join("view_+0.pgm")), "--out", s(&overlay),
    ]);
    assert!(fs::read(&overlay).unwrap().starts_with(b"P6"));

    let decisions = d.join("decisions.csv");
    ok(&["ensemble", "--preds", s(&preds), "--n", "3", "--a", "2", "--out", s(&decisions)]);
    let one = d.join("one.csv");
    fs::write(&one, "patient_id,label\ncase_000,1\n").unwrap();
    let table = ok(&["metrics", "--preds", s(&decisions), "--truth", s(&one)]);
    assert!(table.starts_with("rule\ttp\ttn\tfp\tfn\taccuracy"), "{table}");
    let sweep = ok(&["sweep-a", "--preds", s(&preds), "--truth", s(&one), "--n", "3"]);
    assert_eq!(sweep.lines().count(), 4);
}

#[test]
fn folds_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let patients = dir.path().join("patients.csv");
    let mut text = String::from("patient_id,label\n");
    for i in 0..30 {
        text += &format!("p{i:02},{}\n", u8::from(i % 3 == 0));
    }
    fs::write(&patients, text).unwrap();
    let a = ok(&["folds", "--patients", s(&patients), "--k", "3", "--seed", "17"]);
    let b = ok(&["folds", "--patients", s(&patients), "--k", "3", "--seed", "17"]);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 31);
}

#[test]
fn failures_exit_nonzero_with_a_reason() {
    let out = dtsforge(&["strip-bed", "--in", "/nonexistent/ct.json", "--out", "/tmp/x.json"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("strip-bed"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.csv");
    fs::write(&preds, "patient_id,view_angle_deg,prob_abnormal,label,cutoff\np1,0,0.9,1,0.5\n").unwrap();
    let out = dtsforge(&["ensemble", "--preds", s(&preds), "--n", "5", "--a", "2"]);
    assert!(!out.status.success());
    let out = dtsforge(&["ensemble", "--preds", s(&preds), "--n", "1", "--a", "2"]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_is_deterministic_and_names_failing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{
  "cohort": {"kind": "generate", "n_normal": 2, "n_abnormal": 2,
             "options": {"dims": [90, 75, 40], "spacing_mm": 4.0}},
  "target_mm": 4.0,
  "folds": 2,
  "display_pixels": [64, 64],
  "keep_volumes": false
}"#,
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["pipeline", "--config", s(&config), "--out-dir", s(&out), "--seed", "3", "--pixels", "64,64"]);
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["predictions.csv", "metrics.csv", "fold_metrics.csv", "sweep_a.csv", "folds.csv", "decisions/rule_5-2.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.join("overlays/case_000/view_+0.ppm")).unwrap(), fs::read(b.join("overlays/case_000/view_+0.ppm")).unwrap());
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let rules: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rules, ["5/2", "1/1"]);

    let out = dtsforge(&["pipeline", "--config", s(&config), "--out-dir", s(&dir.path().join("c")), "--folds", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage folds"));
}
