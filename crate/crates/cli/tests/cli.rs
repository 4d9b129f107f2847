use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nonholo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonholo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario_file(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn column(header: &str, name: &str) -> usize {
    header.split(',').position(|c| c == name).unwrap()
}

#[test]
fn list_shows_the_builtins() {
    let out = nonholo(&["list", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["cone-velocity", "constant-speed", "two-particle-alignment"]
    );

    let empty = tempfile::tempdir().unwrap();
    let out = nonholo(&["list", "--json", "--dir", empty.path().to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
}

#[test]
fn two_particle_first_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonholo(&[
        "run",
        "two-particle-alignment",
        "--t-final",
        "0.1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "t,q0,q1,q2,q3,v0,v1,v2,v3,u0,phi0,energy,kinetic,condA"
    );
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(row[column(header, "t")], 0.0);
    assert!((row[column(header, "u0")] + 58.86).abs() <= 1e-9);
    assert_eq!(row[column(header, "phi0")], 0.0);
    assert_eq!(row[column(header, "energy")], 4250.0);
    assert!(!csv.contains('\r'));

    let s = summary(dir.path());
    assert_eq!(s["scenario"], "two-particle-alignment");
    assert!(s["max_abs_phi"].as_f64().unwrap() < 1e-9);
    assert!(s["assumed"].as_array().is_some_and(|a| !a.is_empty()));
    assert!(s["wall_time_s"].as_f64().is_some());
}

#[test]
fn constant_speed_matches_the_nonholonomic_motion() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonholo(&[
        "run",
        "constant-speed",
        "--compare-nonholonomic",
        "--order-check",
        "--t-final",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("nonholonomic.csv").exists());
    let s = summary(dir.path());
    assert_eq!(s["proposition4"], true);
    assert!(s["nonholonomic"]["trajectory_gap"].as_f64().unwrap() <= 1e-6);
    assert!(s["richardson_ratio"].as_f64().is_some());
}

#[test]
fn pole_run_exits_with_truncated_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonholo(&[
        "run",
        &scenario_file("cone-pole.toml"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("halted at t = "));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert!(rows > 1 && rows < 10_001, "{rows} rows");
    let s = summary(dir.path());
    assert_eq!(s["completed"], false);
    assert_eq!(s["halt"]["kind"], "transversality_violation");
}

#[test]
fn check_passes_builtins_and_fails_at_the_pole() {
    for name in ["cone-velocity", "constant-speed", "two-particle-alignment"] {
        let out = nonholo(&["check", name]);
        assert!(
            out.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
    let out = nonholo(&["check", "constant-speed", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["proposition4"], true);

    let text = std::fs::read_to_string(scenario_file("cone-velocity.toml"))
        .unwrap()
        .replace("q = [2.0, 0.0, 0.0]", "q = [1.0, 0.0, 0.0]")
        .replace("v = [0.0, 1.0, -1.0]", "v = [1.0, 0.0, 1.0]");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pole.toml");
    std::fs::write(&path, text).unwrap();
    let out = nonholo(&["check", path.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cond = v["items"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["name"] == "condition estimate")
        .unwrap();
    assert_eq!(cond["pass"], false);
}

#[test]
fn identical_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = nonholo(&[
            "run",
            "cone-velocity",
            "--t-final",
            "0.5",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn validate_accepts_output_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonholo(&[
        "run",
        "constant-speed",
        "--t-final",
        "0.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = dir.path().join("trajectory.csv");
    let ok = nonholo(&[
        "validate",
        csv.to_str().unwrap(),
        "--scenario",
        "constant-speed",
    ]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );

    // perturb the stored energy of the first data row
    let text = std::fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    let k = column(header, "energy");
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    let e: f64 = fields[k].parse().unwrap();
    fields[k] = format!("{:.16e}", e + 1e-9);
    lines[1] = fields.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let bad = nonholo(&[
        "validate",
        csv.to_str().unwrap(),
        "--scenario",
        "constant-speed",
    ]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn setup_errors_exit_one() {
    assert_eq!(nonholo(&["run", "no-such-scenario"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = nonholo(&[
        "run",
        "constant-speed",
        "--param",
        "zz=1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // moving c takes the initial speed off the sphere unless projection is requested
    let out = nonholo(&[
        "run",
        "constant-speed",
        "--param",
        "c=4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = nonholo(&[
        "run",
        "constant-speed",
        "--param",
        "c=4",
        "--project-initial",
        "--t-final",
        "0.1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(summary(dir.path())["parameters"]["c"], 4.0);
}
