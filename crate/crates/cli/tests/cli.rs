use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stylegallery_core::fixtures::{checker, landscape, two_tone};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stylegallery"));
    c.env_remove("STYLEGALLERY_BACKEND");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// content.png, s1.png and s2.png at 128x128.
fn images(dir: &Path) -> [PathBuf; 3] {
    let paths = ["content", "s1", "s2"].map(|n| dir.join(format!("{n}.png")));
    landscape(128, 128).save_png(&paths[0]).unwrap();
    checker(128, 128).save_png(&paths[1]).unwrap();
    two_tone(128, 128).save_png(&paths[2]).unwrap();
    paths
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn transfer_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let [c, s1, s2] = images(dir.path());
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&[
            "transfer", "--content", s(&c), "--styles", s(&s1), s(&s2), "--backend", "synthetic", "--seed", "7",
            "--opt-steps", "20", "--out", s(&out),
        ]);
        for f in ["result.png", "matches.json", "report.json", "manifest.json", "masks/content.mask.png", "masks/s2.mask.json"] {
            assert!(out.join(f).is_file(), "{f} missing");
        }
        let report = json(&out.join("report.json"));
        assert_eq!(report["steps"], 20);
        let manifest = json(&out.join("manifest.json"));
        assert_eq!(manifest["seed"], 7);
        assert_eq!(manifest["config"]["transfer"]["opt_steps"], 20);
        assert_eq!(manifest["input_hashes"].as_object().unwrap().len(), 3);
        for stage in ["cluster", "match", "transfer"] {
            assert!(manifest["timings_ms"][stage].is_number());
        }
        hashes.push((report["result_hash"].clone(), manifest["output_hashes"]["result"].clone()));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn suite_accuracy_at_default_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["cluster", "--suite", "--merge-threshold", "0.85", "--out", s(dir.path())]);
    assert!(stdout.contains("merge_threshold 0.85"));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["fixtures"], 10);
    assert!(report["points"][0]["accuracy"].as_f64().unwrap() >= 0.9);
}

#[test]
fn eval_of_style_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let [c, ..] = images(dir.path());
    let out = dir.path().join("eval");
    ok(&["eval", "--stylized", s(&c), "--style", s(&c), "--fid", "16.889", "--lpips", "0.3716", "--out", s(&out)]);
    let r = json(&out.join("report.json"));
    assert!((r["style"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(r["gram"].as_f64().unwrap().abs() < 1e-12);
    assert!((r["artfid"].as_f64().unwrap() - 24.536).abs() < 0.01);
}

#[test]
fn lambda_sweep_reports_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let [c, s1, s2] = images(dir.path());
    let out = dir.path().join("sweep");
    let stdout = ok(&[
        "eval", "--sweep", "lambda_c=0.22,0.26,0.29", "--content", s(&c), "--styles", s(&s1), s(&s2), "--jobs", "2",
        "--opt-steps", "3", "--out", s(&out),
    ]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("lambda_c=")).count(), 3);
    let r = json(&out.join("report.json"));
    let points = r["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(points[1]["value"], 0.26);
    assert_eq!(points[2]["pairs"].as_array().unwrap().len(), 2);
}

#[test]
fn cluster_from_fixture_base_mask() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fixtures");
    ok(&["fixtures", "--out", s(&fx)]);
    let out = dir.path().join("cluster");
    ok(&[
        "cluster", "--image", s(&fx.join("lakeside.png")), "--base-mask", s(&fx.join("lakeside.mask.png")),
        "--k-max", "6", "--out", s(&out),
    ]);
    let side = json(&out.join("masks/lakeside.mask.json"));
    assert_eq!(side["provenance"], "external_base");
    assert_eq!(side["config"]["k_max"], 6);
    assert!(side["n_clusters"].as_u64().unwrap() <= 6);
}

#[test]
fn overrides_file_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let [c, s1, s2] = images(dir.path());
    let ov = dir.path().join("ov.json");
    std::fs::write(&ov, r#"[{"content_cluster": 0, "style_image": "s1", "style_cluster": 0}]"#).unwrap();
    let out = dir.path().join("m");
    ok(&["match", "--content", s(&c), "--styles", s(&s1), s(&s2), "--overrides", s(&ov), "--out", s(&out)]);
    let table = json(&out.join("matches.json"));
    let e = &table["entries"][0];
    assert_eq!((e["style_image"].as_str(), e["origin"].as_str()), (Some("s1"), Some("user_override")));
    assert!(!out.join("result.png").exists());

    std::fs::write(&ov, r#"[{"content_cluster": 0, "style_image": "nope", "style_cluster": 0}]"#).unwrap();
    let bad = run(&["match", "--content", s(&c), "--styles", s(&s1), "--overrides", s(&ov), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap_or_else(|_| panic!("not JSON: {text}"))
}

#[test]
fn exit_codes_and_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let [c, s1, _] = images(dir.path());
    let out = s(dir.path());

    let bad_knob = run(&["--error-json", "cluster", "--image", s(&c), "--merge-threshold", "1.5", "--out", out]);
    assert_eq!(bad_knob.status.code(), Some(1));
    assert_eq!(error_json(&bad_knob)["error"]["kind"], "validation");

    let missing = run(&["cluster", "--image", "/nonexistent.png", "--out", out]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_flag = run(&["cluster", "--image", s(&c), "--bogus", "--out", out, "--error-json"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    assert_eq!(error_json(&bad_flag)["error"]["exit_code"], 1);

    let odd = dir.path().join("odd.png");
    landscape(120, 128).save_png(&odd).unwrap();
    assert_eq!(run(&["cluster", "--image", s(&odd), "--out", out]).status.code(), Some(1));

    let unavailable = run(&["--backend", "diffusion", "--error-json", "cluster", "--image", s(&c), "--out", out]);
    assert_eq!(unavailable.status.code(), Some(2));
    let e = error_json(&unavailable);
    assert_eq!(e["error"]["kind"], "runtime");
    assert!(e["error"]["message"].as_str().unwrap().contains("diffusion"));

    let via_env = bin()
        .env("STYLEGALLERY_BACKEND", "diffusion")
        .args(["match", "--content", s(&c), "--styles", s(&s1), "--out", out])
        .output()
        .unwrap();
    assert_eq!(via_env.status.code(), Some(2));

    assert!(run(&["--help"]).status.success());
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let [c, ..] = images(dir.path());
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[clustering]\nk_max = 3\n[transfer]\nlambda_c = 0.29\n").unwrap();
    let out = dir.path().join("o");
    ok(&["--config", s(&cfg), "cluster", "--image", s(&c), "--out", s(&out)]);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["clustering"]["k_max"], 3);
    assert_eq!(manifest["config"]["transfer"]["lambda_c"], 0.29);

    // flags win over the file
    ok(&["--config", s(&cfg), "cluster", "--image", s(&c), "--k-max", "4", "--out", s(&out)]);
    assert_eq!(json(&out.join("manifest.json"))["config"]["clustering"]["k_max"], 4);

    std::fs::write(&cfg, "[clustering]\nk_max = \"many\"\n").unwrap();
    let bad = run(&["--config", s(&cfg), "cluster", "--image", s(&c), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}
