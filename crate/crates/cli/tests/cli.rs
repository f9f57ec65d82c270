use std::process::Command;

fn msmfe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msmfe"))
}

#[test]
fn writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex1.csv");
    let status = msmfe()
        .args(["--method", "msmfe1", "--example", "1", "--levels", "2,4", "--threads", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "h,e_sigma,r_sigma,e_div,r_div,e_u,r_u,e_proj_u,r_proj_u,e_p,r_p");
    assert_eq!(lines.len(), 3);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "0.5");
    assert!(first.iter().skip(2).step_by(2).all(|r| r.is_empty()), "{}", lines[1]);
    assert!(lines[2].split(',').skip(2).step_by(2).all(|r| r.parse::<f64>().is_ok()), "{}", lines[2]);
    assert_eq!(String::from_utf8_lossy(&status.stdout), csv);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ex1.csv.manifest.json")).unwrap()).unwrap();
    assert!(manifest.get("config").is_some(), "{manifest}");
}

#[test]
fn markdown_output() {
    let out = msmfe().args(["--example", "1", "--levels", "2,4", "--format", "markdown"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("| h |"));
    assert!(text.contains("| 1/4 |"));
}

#[test]
fn saddle_oracle_runs() {
    let out = msmfe().args(["--method", "saddle-oracle", "--example", "1", "--levels", "2"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rejects_bad_configuration() {
    for args in [
        vec!["--example", "3", "--levels", "4"],
        vec!["--example", "2", "--levels", "16"],
        vec!["--example", "7"],
        vec!["--method", "msmfe2"],
        vec!["--example", "1", "--levels", "4,2"],
        vec!["--example", "1", "--format", "xml"],
    ] {
        let out = msmfe().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn reads_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.msh");
    std::fs::write(&path, "2 4 2\n0 0\n1 0\n0 1\n1 1\n0 1 3\n0 3 2\n").unwrap();
    let out = msmfe().args(["--example", "1", "--mesh-file"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}
