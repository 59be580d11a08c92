use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_splatfill")).current_dir(dir).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn synth(dir: &Path) {
    let spec = r#"{ "view_count": 3, "width": 40, "height": 30, "focal": 36.0, "seed": 2 }"#;
    std::fs::write(dir.join("spec.json"), spec).unwrap();
    let (code, err) = run(dir, &["synth", "--spec", "spec.json", "--out", "data"]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["render", "--bogus"]).0, 2);
    assert_eq!(run(dir.path(), &["--threads", "0", "synth", "--spec", "x", "--out", "y"]).0, 2);
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("cfg.json"), r#"{ "initial_iterations": 0, "seed_opacity": 2.0 }"#).unwrap();
    let (code, err) = run(dir.path(), &["train-initial", "--data", "data", "--config", "cfg.json", "--out", "s.gsbin", "--renders", "r"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn reference_out_of_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("cfg.json"), r#"{ "initial_iterations": 0 }"#).unwrap();
    let (code, err) = run(dir.path(), &["train-initial", "--data", "data", "--config", "cfg.json", "--out", "s.gsbin", "--renders", "r"]);
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(dir.path(), &["confidence", "--data", "data", "--scene", "s.gsbin", "--reference", "7", "--out", "c.json"]);
    assert_eq!(code, 3);
    assert!(err.contains('7'), "{err}");
}

#[test]
fn missing_view_file_exits_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::remove_file(dir.path().join("data/view_1/depth.f32")).unwrap();
    let (code, err) = run(dir.path(), &["train-initial", "--data", "data", "--out", "s.gsbin", "--renders", "r"]);
    assert_eq!(code, 3);
    assert!(err.contains("view 1"), "{err}");
}

#[test]
fn training_log_uses_schema_keys() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("cfg.json"), r#"{ "initial_iterations": 20, "inpaint_iterations": 20 }"#).unwrap();
    let base = ["--data", "data", "--config", "cfg.json"];
    let (code, err) = run(dir.path(), &[&["train-initial"][..], &base, &["--out", "s.gsbin", "--renders", "r"]].concat());
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(dir.path(), &[&["train-inpaint"][..], &base, &["--scene", "s.gsbin", "--reference", "0", "--out", "f.gsbin", "--log", "log.ndjson"]].concat());
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(dir.path().join("log.ndjson")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines[0].get("config").is_some());
    let rec = lines.iter().find(|l| l.get("iteration").is_some()).expect("training record");
    for key in ["L_C", "L_D", "L_iN", "L_iLPIPS", "P′_fraction"] {
        assert!(rec.get(key).is_some(), "missing {key} in {rec}");
    }
}
