use std::process::{Command, Output};

fn kgz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgz")).args(args).output().expect("run kgz")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn soliton_csv_has_schema_and_columns() {
    let o = kgz(&["soliton", "--omega", "-1/sqrt2", "--N", "128"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema: kgz-soliton/1"));
    assert_eq!(lines.next(), Some("x,phi,dphi,domega_phi"));
    assert_eq!(lines.count(), 128);
}

#[test]
fn identities_rows_per_frequency() {
    let o = kgz(&["identities", "--omega", "0,0.3,-0.9", "--N", "512"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# schema: kgz-identities/1\nomega,q_value,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn spectrum_json_reports_morse_index() {
    let o = kgz(&["spectrum", "--omega", "0.5", "--N", "128", "--count", "5"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], "kgz-spectra/1");
    assert_eq!(v["data"]["n_negative"], 1);
    assert_eq!(v["data"]["eigenvalues"].as_array().unwrap().len(), 5);
}

#[test]
fn evolve_writes_diagnostics_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = kgz(&[
        "evolve", "--omega", "0.9", "--a", "0.01", "--T", "0.5", "--L", "40", "--N", "256", "--R", "8", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# schema: kgz-diagnostics/1\nt,E,Q,P,dE_rel,orbit_distance,"));
    assert_eq!(text.lines().count(), 2 + 6);
    let verdict: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(verdict["exited"], false);
}

#[test]
fn virial_check_passes_on_short_window() {
    let o = kgz(&["virial-check", "--omega", "1/sqrt2", "--window", "0.2", "--N", "512"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["data"]["check"]["max_residual"].as_f64().unwrap() < 1e-4);
}

#[test]
fn modfit_emits_one_record_per_sample() {
    let o = kgz(&["modfit", "--omega", "0.9", "--T", "0.2", "--record-every", "5", "--L", "40", "--N", "256", "--R", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], "kgz-modfit/1");
    assert_eq!(v["data"]["records"].as_array().unwrap().len(), 5);
    assert!(v["data"]["failure"].is_null());
}

#[test]
fn scan_reads_config_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.cfg");
    std::fs::write(&cfg, "omega = 0.9, 0.5\na = 0.01\nL = 40\nN = 256\nR = 8\nT = 0.5\n").unwrap();
    let out = dir.path().join("out");
    let o = kgz(&[
        "scan", "--config", cfg.to_str().unwrap(), "--set", "dt=0.005", "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("scan.csv")).unwrap();
    assert!(table.starts_with("# schema: kgz-scan/1\n"));
    assert_eq!(table.lines().count(), 4);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 3);
}

#[test]
fn bad_input_exits_with_error_code() {
    assert_eq!(kgz(&["soliton", "--omega", "1.5"]).status.code(), Some(2));
    assert_eq!(kgz(&["scan", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(kgz(&["scan", "--set", "omega=0.9", "--set", "R=40"]).status.code(), Some(1));
}

#[test]
fn suite_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgz(&[
        "suite", "--omega", "0,0.5", "--identities-points", "512", "--spectra-points", "256", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 4);
    assert!(text.contains("coercivity skipped"));
    let spectra: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectra.json")).unwrap()).unwrap();
    assert_eq!(spectra["schema"], "kgz-spectra/1");
}
