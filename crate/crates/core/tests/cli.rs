use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spine3d::euformer::EUFormerConfig;
use spine3d::imageio::write_pgm;
use spine3d::synth::CASE_FILES;
use spine3d::tensor::{Shape, Tensor};

fn spine3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spine3d"))
        .args(args)
        .env("SPINE3D_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn grade_prints_severity() {
    let out = spine3d(&["grade", "--angle", "45"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), r#"{"severity":"severe"}"#);
    let out = spine3d(&["grade", "--angle", "20"]);
    assert_eq!(json_stdout(&out)["severity"], "moderate");
    assert_eq!(spine3d(&["grade", "--angle", "-3"]).status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = spine3d(&["--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(spine3d(&["grade"]).status.code(), Some(2));
    assert_eq!(spine3d(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = spine3d(&["synth", "--n", "3", "--seed", "7", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut cases: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    cases.sort();
    assert_eq!(cases.len(), 3);
    for case in &cases {
        for f in CASE_FILES {
            assert!(case.join(f).is_file(), "{} missing {f}", case.display());
        }
        assert_eq!(std::fs::read_dir(case).unwrap().count(), CASE_FILES.len());
    }
    assert!(cases[0].ends_with("case_0000"));

    // Same seed, same bytes.
    let again = tempfile::tempdir().unwrap();
    spine3d(&["synth", "--n", "3", "--seed", "7", "--out", s(again.path())]);
    for f in CASE_FILES {
        let a = std::fs::read(cases[1].join(f)).unwrap();
        let b = std::fs::read(again.path().join("case_0001").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between seeded runs");
    }
}

#[test]
fn maps_only_assessment_of_oracle_maps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = spine3d(&["synth", "--n", "2", "--seed", "11", "--severity", "moderate", "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(0));
    for case in ["case_0000", "case_0001"] {
        let c = data.join(case);
        let report_dir = dir.path().join(case);
        let out = spine3d(&[
            "assess",
            "--maps-only",
            "--pa",
            s(&c.join("pa.pgm")),
            "--lat",
            s(&c.join("lat.pgm")),
            "--out",
            s(&report_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let report = read_json(&report_dir.join("report.json"));
        let truth = read_json(&c.join("truth.json"));
        let angle = report["cobb3d"]["max_angle_deg"].as_f64().unwrap();
        let expected = truth["analytic_angle_deg"].as_f64().unwrap();
        assert!((angle - expected).abs() < 2.0, "{angle} vs {expected}");
        assert_eq!(report["cobb3d"]["severity"], "moderate");
        assert!(report["cobb2d"].is_object());
        assert!(report["error"].is_null());
    }
}

#[test]
fn straight_maps_assess_as_normal() {
    let dir = tempfile::tempdir().unwrap();
    let stripe = Tensor::from_fn(Shape::hwc(320, 160, 1), |_, _, j, _| {
        (-((j as f64 - 79.5) / 2.5).powi(2) / 2.0).exp()
    });
    let (pa, lat) = (dir.path().join("pa.pgm"), dir.path().join("lat.pgm"));
    write_pgm(&pa, &stripe).unwrap();
    write_pgm(&lat, &stripe).unwrap();
    let out = spine3d(&["assess", "--maps-only", "--pa", s(&pa), "--lat", s(&lat), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let report = json_stdout(&out);
    assert!(report["cobb3d"]["max_angle_deg"].as_f64().unwrap() < 1.0);
    assert_eq!(report["cobb3d"]["severity"], "normal-mild");
}

#[test]
fn disjoint_views_fail_with_overlap_error() {
    let dir = tempfile::tempdir().unwrap();
    let band = |lo: usize, hi: usize| {
        Tensor::from_fn(Shape::hwc(320, 160, 1), move |_, i, j, _| ((lo..hi).contains(&i) && j == 80) as u8 as f64)
    };
    let (pa, lat) = (dir.path().join("pa.pgm"), dir.path().join("lat.pgm"));
    write_pgm(&pa, &band(0, 100)).unwrap();
    write_pgm(&lat, &band(200, 320)).unwrap();
    let out = spine3d(&["assess", "--maps-only", "--pa", s(&pa), "--lat", s(&lat), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
    let report = read_json(&dir.path().join("report.json"));
    assert!(report["error"].as_str().unwrap().contains("overlap"));
    assert!(report["cobb3d"].is_null());
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    spine3d(&["synth", "--n", "6", "--seed", "3", "--out", s(&data)]);
    let report_path = dir.path().join("eval.json");
    let out = spine3d(&["eval", "--pred", s(&data), "--truth", s(&data), "--out", s(&report_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&report_path);
    assert_eq!(report["overlap"]["iou_mean"], 1.0);
    assert_eq!(report["overlap"]["dice_sd"], 0.0);
    assert_eq!(report["grading"]["macro_avg_sensitivity"], 1.0);
    let cm = &report["grading"]["confusion_matrix"]["counts"];
    for (i, row) in cm.as_array().unwrap().iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(v.as_u64().unwrap(), if i == j { 2 } else { 0 });
        }
    }
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["threshold", "cases", "overlap", "grading"]);
}

#[test]
fn flops_prints_both_counts() {
    let out = spine3d(&["flops", "--h", "16", "--w", "16", "--c", "32", "--heads", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["channel"], 524_288);
    assert_eq!(v["spatial"], 2 * 256 * 256 * 32);
    assert_eq!(spine3d(&["flops", "--h", "4", "--w", "4", "--c", "6", "--heads", "4"]).status.code(), Some(1));
}

#[test]
fn train_then_assess_with_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    spine3d(&["synth", "--n", "2", "--seed", "5", "--height", "64", "--width", "32", "--thickness", "3", "--out", s(&data)]);
    let config = dir.path().join("tiny.json");
    std::fs::write(&config, serde_json::to_vec(&EUFormerConfig::tiny()).unwrap()).unwrap();
    let ckpt = dir.path().join("g.ckpt");
    let train = |extra: &[&str]| {
        let mut args = vec![
            "train", "--data", s(&data), "--out", s(&ckpt), "--steps", "3", "--seed", "4", "--config", s(&config),
            "--disc-width", "2", "--batch", "2",
        ];
        args.extend_from_slice(extra);
        spine3d(&args)
    };
    let out = train(&[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(dir.path().join("g.ckpt.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("step,lr,loss_g,loss_mse,loss_total,loss_d\n"));
    let first = std::fs::read(&ckpt).unwrap();
    train(&[]);
    assert_eq!(std::fs::read(&ckpt).unwrap(), first, "training is not seed-deterministic");

    let case = data.join("case_0000");
    let out_dir = dir.path().join("assess");
    let out = spine3d(&[
        "assess", "--pa", s(&case.join("pa_rgb.ppm")), "--lat", s(&case.join("lat_rgb.ppm")), "--params", s(&ckpt),
        "--height", "64", "--width", "32", "--out", s(&out_dir),
    ]);
    // An almost untrained generator may or may not produce a usable curve;
    // either way the maps and the report are written.
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    assert!(out_dir.join("pa.pgm").is_file() && out_dir.join("lat.pgm").is_file());
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["cobb3d"].is_null(), !report["error"].is_null());

    let missing = spine3d(&["assess", "--pa", "a.ppm", "--lat", "b.ppm", "--out", s(&out_dir)]);
    assert_eq!(missing.status.code(), Some(1));
}
