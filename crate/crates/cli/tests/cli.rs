use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lane-cbf"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn exec(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("binary runs");
    (
        status.code().expect("exit code"),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

fn scenario_json(mutate: impl FnOnce(&mut serde_json::Value)) -> String {
    let text = std::fs::read_to_string(repo("scenarios/scenario2.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    mutate(&mut v);
    v.to_string()
}

fn write_tmp(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn run_scenario2_writes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, stdout, stderr) = exec(bin().arg("run").arg(repo("scenarios/scenario2.json")).arg("--out").arg(&out));
    assert_eq!(code, 0, "{stdout}{stderr}");
    assert!(stdout.contains("invariance PASS"));
    for f in ["trajectory.jsonl", "summary.csv", "report.json", "trajectory.svg", "barriers.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["invariance"], "PASS");
    assert_eq!(report["solver_failures"], 0);
    let log = std::fs::read_to_string(out.join("trajectory.jsonl")).unwrap();
    // 3 vehicles x 151 control instants
    assert_eq!(log.lines().count(), 453);
    let svg = std::fs::read_to_string(out.join("trajectory.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn dt_not_dividing_period_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tmp(dir.path(), "bad.json", &scenario_json(|v| v["dt"] = 0.03.into()));
    let (code, _, stderr) = exec(bin().arg("run").arg(cfg).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("does not divide"), "{stderr}");
}

#[test]
fn initially_unsafe_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tmp(
        dir.path(),
        "unsafe.json",
        &scenario_json(|v| v["vehicles"][1]["initial"]["x"] = 10.0.into()),
    );
    let (code, _, stderr) = exec(bin().arg("run").arg(cfg).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("initially unsafe") && stderr.contains("b1"), "{stderr}");
}

#[test]
fn malformed_and_unknown_fields_report_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tmp(dir.path(), "broken.json", "{\n  \"name\": \"x\",\n  \"horizon\": ,\n}");
    let (code, _, stderr) = exec(bin().arg("run").arg(cfg).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("line 3"), "{stderr}");

    let cfg = write_tmp(dir.path(), "typo.json", &scenario_json(|v| v["horizn"] = 3.0.into()));
    let (code, _, stderr) = exec(bin().arg("run").arg(cfg).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("horizn"), "{stderr}");
}

#[test]
fn missing_config_and_bad_usage_exit_2() {
    let (code, _, _) = exec(bin().arg("run").arg("/nonexistent/scenario.json"));
    assert_eq!(code, 2);
    let (code, _, _) = exec(&mut bin());
    assert_eq!(code, 2);
    let (code, _, _) = exec(bin().arg("check-gradients").arg("--seed").arg("minus-one"));
    assert_eq!(code, 2);
}

#[test]
fn validate_params_defaults_pass_with_warning() {
    let (code, stdout, _) = exec(bin().arg("validate-params").arg(repo("configs/coordination_default.json")));
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("[WARN] lambda_saturation"));
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn validate_params_accepts_a_scenario() {
    let (code, stdout, _) = exec(bin().arg("validate-params").arg(repo("scenarios/scenario1.json")));
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn validate_params_flat_sigma_fails() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo("configs/coordination_default.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["sigma"]["s2"] = 0.0.into();
    let cfg = write_tmp(dir.path(), "flat.json", &v.to_string());
    let (code, stdout, _) = exec(bin().arg("validate-params").arg(cfg));
    assert_eq!(code, 1);
    assert!(stdout.contains("[FAIL] sigma_strictly_decreasing"), "{stdout}");
}

#[test]
fn validate_params_flipped_cubic_reports_witness() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo("configs/coordination_default.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["lambda"]["a1"] = (-234.14).into();
    let cfg = write_tmp(dir.path(), "flip.json", &v.to_string());
    let (code, stdout, _) = exec(bin().arg("validate-params").arg(cfg));
    assert_eq!(code, 1);
    let line = stdout.lines().find(|l| l.contains("lambda_monotone")).unwrap();
    assert!(line.starts_with("[FAIL]") && line.contains("worst at"), "{line}");
}

#[test]
fn check_gradients_default_passes() {
    let (code, stdout, _) = exec(bin().arg("check-gradients"));
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("PASS: 1000 frames"), "{stdout}");
}

#[test]
fn check_gradients_catches_broken_derivative() {
    let (code, stdout, _) = exec(bin().args(["check-gradients", "--samples", "50", "--break-derivative"]));
    assert_eq!(code, 1);
    assert!(stdout.contains("worst: frame") && stdout.contains("b3 a_omega"), "{stdout}");
}

#[test]
fn check_gradients_zero_samples_is_usage_error() {
    let (code, _, stderr) = exec(bin().args(["check-gradients", "--samples", "0"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("samples"));
}

#[test]
fn plot_rerenders_a_log_without_touching_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, _, _) = exec(bin().arg("run").arg(repo("scenarios/scenario1.json")).arg("--out").arg(&out));
    assert_eq!(code, 0);
    let log = out.join("trajectory.jsonl");
    let before = std::fs::read(&log).unwrap();
    let plots = dir.path().join("plots");
    let (code, _, stderr) = exec(
        bin()
            .arg("plot")
            .arg(&log)
            .arg("--out")
            .arg(&plots)
            .arg("--config")
            .arg(repo("scenarios/scenario1.json")),
    );
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(std::fs::read(&log).unwrap(), before);
    assert_eq!(
        std::fs::read(plots.join("trajectory.svg")).unwrap(),
        std::fs::read(out.join("trajectory.svg")).unwrap()
    );
}

#[test]
fn plot_rejects_corrupt_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_tmp(dir.path(), "log.jsonl", "{\"step\": 0}\n");
    let (code, _, stderr) = exec(bin().arg("plot").arg(log).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("line 1"), "{stderr}");
}
