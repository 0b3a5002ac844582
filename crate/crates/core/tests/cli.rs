use std::path::Path;
use std::process::Command;

fn thinlayer(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_thinlayer")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn validate_good_and_bad() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ok = thinlayer(&["validate", &scenario("good.scn"), "--out", out]);
    assert_eq!(ok.status.code(), Some(0));
    let good_digest = manifest(dir.path())["scenario_digest"].as_str().unwrap().to_string();

    let bad = thinlayer(&["validate", &scenario("bad.scn"), "--out", out]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("[A1]"));
    let m = manifest(dir.path());
    assert_eq!(m["exit_code"], 3);
    assert_ne!(m["scenario_digest"].as_str().unwrap(), good_digest);
}

#[test]
fn usage_errors() {
    assert_eq!(thinlayer(&["validate", &scenario("good.scn"), "--nope"]).status.code(), Some(2));
    assert_eq!(thinlayer(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = thinlayer(&["micro", &scenario("good.scn"), "--epsilon", "0.3", "--out", out]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(thinlayer(&["cell", "/nonexistent/x.scn"]).status.code(), Some(1));
}

#[test]
fn solver_commands_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let good = scenario("good.scn");
    assert_eq!(thinlayer(&["cell", &good, "--out", out, "--resolution", "8"]).status.code(), Some(0));
    let cell = std::fs::read_to_string(dir.path().join("cell.csv")).unwrap();
    assert_eq!(cell.lines().next(), Some("y1,y2,w1,w2"));
    assert_eq!(cell.lines().count(), 1 + 8 * 17);
    assert!(dir.path().join("boundary_layer_plus.csv").exists());

    let r = thinlayer(&["macro", &good, "--out", out, "--resolution", "8", "--snapshots", "3"]);
    assert_eq!(r.status.code(), Some(0));
    assert!(dir.path().join("snapshots/macro_002.csv").exists());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("macro.json")).unwrap()).unwrap();
    assert_eq!(m["summary"]["steps"], 10);

    let r = thinlayer(&["micro", &good, "--out", out, "--epsilon", "1/4", "--snapshots", "2"]);
    assert_eq!(r.status.code(), Some(0));
    assert!(dir.path().join("snapshots/micro_eps4_001.csv").exists());
    assert_eq!(manifest(dir.path())["command"], "micro");
}

#[test]
fn study_rate_assertion_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let good = scenario("good.scn");
    let pass = thinlayer(&["study", &good, "--out", out, "--assert-rates=-10,-10", "--jobs", "2"]);
    assert_eq!(pass.status.code(), Some(0), "{}", String::from_utf8_lossy(&pass.stderr));
    let csv = std::fs::read_to_string(dir.path().join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let fail = thinlayer(&["study", &good, "--out", out, "--assert-rates", "10,10"]);
    assert_eq!(fail.status.code(), Some(5));
    let few = thinlayer(&["study", &good, "--out", out, "--skip-finest", "--assert-rates", "0,0"]);
    assert_eq!(few.status.code(), Some(5));
}
