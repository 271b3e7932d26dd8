use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_toruskam"));
    c.env_remove("TORUSKAM_OUT");
    c
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("toruskam-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const DN: &str = r#"{ "name": "dn-small", "command": "dn", "params": { "eta": [[1, 0.05]], "n": 16 } }"#;

#[test]
fn malformed_json_is_a_config_error() {
    let d = scratch("malformed");
    let p = write(&d, "bad.json", "{ \"name\": \"x\", ");
    let o = bin().args(["run", "--scenario"]).arg(&p).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_parameter_and_wrong_subcommand_are_config_errors() {
    let d = scratch("schema");
    let p = write(&d, "s.json", r#"{ "name": "x", "command": "dn", "params": { "bogus": 1 } }"#);
    let o = bin().args(["dn", "--scenario"]).arg(&p).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let p = write(&d, "t.json", DN);
    let o = bin().args(["flow", "--scenario"]).arg(&p).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 2);
    let p = write(&d, "u.json", r#"{ "name": "x", "command": "nope" }"#);
    assert_eq!(code(&bin().args(["run", "--scenario"]).arg(&p).output().unwrap()), 2);
}

#[test]
fn single_scenario_writes_report_and_artifacts() {
    let d = scratch("single");
    let p = write(&d, "dn.json", DN);
    let o = bin().args(["dn", "--scenario"]).arg(&p).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(&d.join("dn-small.json"));
    assert_eq!(r["pass"], true);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["threshold"].is_number()));
    assert!(d.join("dn-small.matrix.csv").exists());
    assert!(json(&d.join("dn-small.timing.json"))["seconds"].is_number());
}

#[test]
fn reports_are_byte_identical_across_runs_and_threads() {
    let d = scratch("identical");
    let m = write(
        &d,
        "m.json",
        &format!(
            r#"{{ "scenarios": [ {DN}, {{ "name": "meas", "command": "measure", "params": {{ "gammas": [1e-2, 1e-3], "ell_max": 3, "mode_max": 6 }} }} ] }}"#
        ),
    );
    let (a, b) = (d.join("a"), d.join("b"));
    assert_eq!(code(&bin().args(["suite", "--manifest"]).arg(&m).arg("--out").arg(&a).output().unwrap()), 0);
    let o = bin().args(["suite", "--threads", "2", "--manifest"]).arg(&m).arg("--out").arg(&b).output().unwrap();
    assert_eq!(code(&o), 0);
    for f in ["dn-small.json", "dn-small.matrix.csv", "meas.json", "meas.measures.csv", "summary.json", "summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn one_failing_scenario_gives_exit_three() {
    let d = scratch("failing");
    let m = write(
        &d,
        "m.json",
        &format!(
            r#"{{ "scenarios": [ {DN}, {{ "name": "strict", "command": "dn", "params": {{ "n": 16, "residual_tol": 1e-30 }} }} ] }}"#
        ),
    );
    let o = bin().args(["suite", "--manifest"]).arg(&m).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 3);
    let s = json(&d.join("summary.json"));
    assert_eq!(s["failed"], 1);
    assert_eq!(s["rows"][1]["name"], "strict");
    let r = json(&d.join("strict.json"));
    assert_eq!(r["failures"], serde_json::json!(["dn.conformal_residual"]));
}

#[test]
fn melnikov_failure_names_the_resonant_triple() {
    // thresholds sit between the step 1 and step 2 Melnikov ratios
    let d = scratch("melnikov");
    let p = write(&d, "k.json", r#"{ "name": "mel", "command": "kam", "seed": 1, "params": { "gamma": 1.5365e-2 } }"#);
    let o = bin().args(["kam", "--scenario"]).arg(&p).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 3);
    let r = json(&d.join("mel.json"));
    let e = r["error"].as_str().unwrap();
    assert!(e.contains("after 1 completed steps"), "{e}");
    assert!(e.contains("l = [") && e.contains("j = ") && e.contains("j' = "), "{e}");
    assert_eq!(r["data"]["steps_completed"], 1);
}

#[test]
fn environment_overrides_the_output_flag() {
    let d = scratch("env");
    let p = write(&d, "dn.json", DN);
    let (flag, env) = (d.join("flag"), d.join("env"));
    let o = bin().env("TORUSKAM_OUT", &env).args(["run", "--scenario"]).arg(&p).arg("--out").arg(&flag).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(env.join("dn-small.json").exists());
    assert!(!flag.exists());
}

#[test]
fn empty_manifest_succeeds() {
    let d = scratch("empty");
    let m = write(&d, "m.json", r#"{ "scenarios": [] }"#);
    let o = bin().args(["suite", "--manifest"]).arg(&m).arg("--out").arg(&d).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(json(&d.join("summary.json"))["failed"], 0);
    let m = write(&d, "n.json", r#"{ "runs": [] }"#);
    assert_eq!(code(&bin().args(["suite", "--manifest"]).arg(&m).output().unwrap()), 2);
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let d = scratch("seed");
    let p = write(&d, "c.json", r#"{ "name": "cal", "command": "calculus-check", "seed": 5, "params": { "checks": ["oracle"], "pairs": 2, "n_x": 16 } }"#);
    let a = d.join("a");
    assert_eq!(code(&bin().args(["calculus-check", "--seed", "9", "--scenario"]).arg(&p).arg("--out").arg(&a).output().unwrap()), 0);
    assert_eq!(json(&a.join("cal.json"))["scenario"]["seed"], 9);
}

#[test]
fn manifest_paths_are_relative_to_the_manifest() {
    let d = scratch("relative");
    std::fs::create_dir_all(d.join("sub")).unwrap();
    write(&d.join("sub"), "dn.json", DN);
    let m = write(&d, "m.json", r#"{ "scenarios": ["sub/dn.json"] }"#);
    let o = bin().args(["suite", "--manifest"]).arg(&m).arg("--out").arg(d.join("o")).output().unwrap();
    assert_eq!(code(&o), 0);
    let dup = write(&d, "dup.json", r#"{ "scenarios": ["sub/dn.json", "sub/dn.json"] }"#);
    assert_eq!(code(&bin().args(["suite", "--manifest"]).arg(&dup).output().unwrap()), 2);
}
