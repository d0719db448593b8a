use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geonmpc"))
}

#[test]
fn simulate_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--max-samples", "5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "trajectory.csv",
        "control.csv",
        "gmres.csv",
        "residual.csv",
        "trajectory3d.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), 6, "{name}");
    }
    let header = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,x,y,z,p\n"));
}

#[test]
fn default_command_is_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--max-samples", "2", "--no-precond", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let gm = std::fs::read_to_string(dir.path().join("gmres.csv")).unwrap();
    assert!(gm.lines().skip(1).all(|l| l.ends_with("NaN")));
}

#[test]
fn init_only_prints_travel_time() {
    let out = bin().arg("init-only").output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let p_line = stdout.lines().find(|l| l.starts_with("p = ")).unwrap();
    let p: f64 = p_line[4..].trim().parse().unwrap();
    assert!((p - 1.2332).abs() <= 0.05);
    // 63 decision entries, then the norm and p lines.
    assert_eq!(stdout.lines().count(), 65);
}

#[test]
fn config_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ini");
    std::fs::write(&path, "horizon = 20\nnot_a_key = 1\n").unwrap();
    let out = bin().arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let missing = bin()
        .args(["--config", "/nonexistent/geonmpc.ini"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn infeasible_start_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("literal.ini");
    std::fs::write(&path, "x0 = -0.5\ny0 = 0.5\n").unwrap();
    let out = bin()
        .arg("init-only")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_precond_flag_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--compare-precond", "--max-samples", "40", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(dir.path().join("precond_comparison.csv")).unwrap();
    assert!(table.lines().last().unwrap().starts_with("mean,"));
}
