mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::TINY;

fn aps(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aps"))
        .args(args)
        .env("RUST_LOG", "warn")
        .current_dir(dir)
        .output()
        .expect("aps binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let run = run.to_str().unwrap();

    let bad = write_config(tmp.path(), &TINY.replace("scene_count = 2", "scene_count = 0"));
    assert_eq!(aps(&["generate", "--config", &bad, "--output-dir", run], tmp.path()).status.code(), Some(2));

    let cfg = write_config(tmp.path(), TINY);
    let out = aps(&["augment", "--config", &cfg, "--output-dir", run], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = aps(&["generate", "--config", &cfg, "--output-dir", run], tmp.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "generate: done");
    let out = aps(&["generate", "--config", &cfg, "--output-dir", run], tmp.path());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "generate: up to date");

    let out = aps(&["generate", "--config", &cfg, "--output-dir", run, "--set", "render.width"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(Path::new(run).join(".lock"), "1").unwrap();
    let out = aps(&["generate", "--config", &cfg, "--output-dir", run, "--force"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infer_prints_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = write_config(tmp.path(), TINY);
    let out = aps(&["all", "--config", &cfg, "--output-dir", run.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let image = std::fs::read_dir(run.join("generate/images/rgb")).unwrap().next().unwrap().unwrap().path();
    let bundle = run.join("evaluate/bundle");
    let out = aps(
        &["infer", "--bundle", bundle.to_str().unwrap(), "--image", image.to_str().unwrap(), "--json"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(v["scene_id"].as_u64().unwrap() < 2);
    let q: Vec<f64> = ["qw", "qx", "qy", "qz"].iter().map(|k| v[k].as_f64().unwrap()).collect();
    assert!((q.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);

    let missing = aps(&["infer", "--bundle", "nowhere", "--image", image.to_str().unwrap()], tmp.path());
    assert!(!missing.status.success());
}
