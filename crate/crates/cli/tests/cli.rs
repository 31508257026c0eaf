use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn brachx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brachx"))
        .args(args)
        .env_remove("BRACHX_NUM_POLICY")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every listed digest matches the file, and the directory holds nothing else.
fn assert_manifest_matches(dir: &Path) {
    let m = manifest(dir);
    let outputs = m["outputs"].as_array().unwrap();
    let mut listed: Vec<String> = outputs.iter().map(|o| o["file"].as_str().unwrap().to_string()).collect();
    for o in outputs {
        let data = fs::read(dir.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&data)));
        assert_eq!(o["bytes"].as_u64().unwrap(), data.len() as u64);
    }
    let mut on_disk: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    listed.sort();
    on_disk.sort();
    assert_eq!(listed, on_disk);
}

#[test]
fn basis_su3_has_eight_elements() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("basis");
    let o = brachx(&["run", "--kind", "basis", "--n", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b: Value = serde_json::from_str(&fs::read_to_string(out.join("basis.json")).unwrap()).unwrap();
    assert_eq!(b["elements"].as_array().unwrap().len(), 8);
    assert_eq!(b["elements"][0]["n"], 3);
    assert_manifest_matches(&out);
    let m = manifest(&out);
    assert_eq!(m["config"]["kind"], "basis");
    assert!(m["numeric_policy"]["branch_cut"].is_number());
}

#[test]
fn simulate_keeps_norm_h() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        &format!(
            r#"{{"kind": "simulate", "seed": 5, "output_dir": "{}",
                "parameters": {{"n": 3, "state_norm": 2.0, "samples": 40}}}}"#,
            out.display()
        ),
    );
    let o = brachx(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let col = rd.headers().unwrap().iter().position(|h| h == "normH_drift").unwrap();
    let mut rows = 0;
    for r in rd.records() {
        let v: f64 = r.unwrap()[col].parse().unwrap();
        assert!(v.abs() < 1e-8, "drift {v:e}");
        rows += 1;
    }
    assert_eq!(rows, 41);
    assert_manifest_matches(&out);
}

#[test]
fn type1_closed_form_is_written_alongside() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t1");
    let o = brachx(&[
        "run",
        "--kind",
        "simulate",
        "--n",
        "4",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let cfg = write_config(
        tmp.path(),
        "t1.json",
        r#"{"kind": "simulate", "seed": 1, "parameters": {"fixture": "su4_type1", "closed_form": true}}"#,
    );
    let out2 = tmp.path().join("t1cf");
    let o = brachx(&["run", &cfg, "--out", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out2.join("trajectory_closed_form.csv").exists());
    assert_manifest_matches(&out2);
}

#[test]
fn unknown_kind_exits_2_and_lists_kinds() {
    let o = brachx(&["run", "--kind", "warp"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for k in ["basis", "simulate", "lyapunov-dist", "euler-arnold-limit"] {
        assert!(err.contains(k), "{err}");
    }
}

#[test]
fn stochastic_kind_without_seed_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.json", r#"{"kind": "solve", "parameters": {"fixture": "su4_type1"}}"#);
    let o = brachx(&["run", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn invalid_json_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", "{\n  \"kind\": \"basis\",\n  \"seed\": ,\n}");
    let o = brachx(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("column"), "{err}");
}

#[test]
fn unknown_parameter_is_rejected() {
    let o = brachx(&["run", "--kind", "basis", "--n", "3", "--tol", "1e-9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tol"));
}

#[test]
fn integration_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("num");
    let o = brachx(&[
        "run", "--kind", "simulate", "--n", "3", "--seed", "2", "--tol", "1e-300", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn rerun_replaces_previous_outputs_but_not_foreign_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let args = ["run", "--kind", "basis", "--n", "2", "--out", out.to_str().unwrap()];
    assert!(brachx(&args).status.success());
    assert!(brachx(&args).status.success());
    assert_manifest_matches(&out);
    fs::write(out.join("notes.txt"), "mine").unwrap();
    assert_eq!(brachx(&args).status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn policy_file_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let pol = write_config(tmp.path(), "policy.json", r#"{"branch_cut": 1e-7}"#);
    let out = tmp.path().join("p");
    let o = Command::new(env!("CARGO_BIN_EXE_brachx"))
        .args(["run", "--kind", "basis", "--n", "2", "--out", out.to_str().unwrap()])
        .env("BRACHX_NUM_POLICY", &pol)
        .output()
        .unwrap();
    assert!(o.status.success());
    let m = manifest(&out);
    assert_eq!(m["numeric_policy"]["branch_cut"].as_f64(), Some(1e-7));
    assert_eq!(m["numeric_policy"]["closure"].as_f64(), Some(1e-10));
}

#[test]
fn seeded_runs_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "fm.json",
        r#"{"kind": "fmeasure", "seed": 9, "parameters": {"fixture": "su4_chaotic", "state": "generic", "n_samples": 12}}"#,
    );
    let mut digests = Vec::new();
    for (i, t) in ["1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("o{i}"));
        let o = brachx(&["--threads", t, "run", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        digests.push(fs::read(out.join("fmeasure.csv")).unwrap());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn figure_one_writes_sidecar_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig1");
    let o = brachx(&["figure", "1", "--scale", "desk", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("fig1.json").exists());
    assert!(out.join("fig1_su4_chaotic.csv").exists());
    assert_manifest_matches(&out);
    assert_eq!(brachx(&["figure", "5"]).status.code(), Some(2));
}
