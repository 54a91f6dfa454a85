use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn stackgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackgame"))
        .args(args)
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_aggregate_writes_the_file_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = stackgame(&[
        "run-aggregate",
        "--config",
        path_str(&scenario("log_aggregate.cfg")),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for f in [
        "iterations.csv",
        "summary.txt",
        "plotdata_relerr.csv",
        "plotdata_satisfaction.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let rows = fs::read_to_string(dir.path().join("iterations.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 3);
}

#[test]
fn early_termination_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = stackgame(&[
        "run-aggregate",
        "--config",
        path_str(&scenario("log_aggregate.cfg")),
        "--out",
        path_str(dir.path()),
        "--iters",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.starts_with("terminated at iteration 3"));
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("log_aggregate.cfg");
    let args = [
        "run-aggregate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
    ];
    assert_eq!(stackgame(&args).status.code(), Some(0));
    let again = stackgame(&args);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(stackgame(&forced).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(
        &cfg,
        "beta = 0.75\nepsilon = -0.1\n[device]\nsat = log:10\ngamma0 = 1,0\ngamma1 = 2,0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = stackgame(&[
        "run-devices",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = dir.path().join("missing.cfg");
    let out = stackgame(&[
        "run-devices",
        "--config",
        path_str(&missing),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn negative_epsilon_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = stackgame(&[
        "run-devices",
        "--config",
        path_str(&scenario("devices_noisy.cfg")),
        "--out",
        path_str(dir.path()),
        "--epsilon=-0.1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_devices_row_count_matches_records_times_devices() {
    let dir = tempfile::tempdir().unwrap();
    let out = stackgame(&[
        "run-devices",
        "--config",
        path_str(&scenario("devices_noisy.cfg")),
        "--out",
        path_str(dir.path()),
        "--epsilon",
        "0.15",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = fs::read_to_string(dir.path().join("iterations.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 50 * 10);
}

#[test]
fn sweep_writes_one_directory_per_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let out = stackgame(&[
        "sweep-epsilon",
        "--config",
        path_str(&scenario("devices_noisy.cfg")),
        "--out",
        path_str(dir.path()),
        "--epsilons",
        "0.1,0.15",
        "--seeds",
        "3",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for eps in ["0.1", "0.15"] {
        let sub = dir.path().join(format!("eps_{eps}"));
        for f in [
            "iterations.csv",
            "summary.txt",
            "plotdata_relerr.csv",
            "plotdata_satisfaction.csv",
            "scenario.cfg",
            "median_relerr.csv",
        ] {
            assert!(sub.join(f).is_file(), "{eps}/{f} missing");
        }
        let rendered = fs::read_to_string(sub.join("scenario.cfg")).unwrap();
        assert!(rendered.contains(&format!("epsilon = {eps}")));
        let medians = fs::read_to_string(sub.join("median_relerr.csv")).unwrap();
        assert!(medians.starts_with("iter,device,runs,median_relerr_alpha_0,median_relerr_alpha_1"));
        assert!(medians.lines().nth(1).unwrap().starts_with("2,0,3,"));
    }
}
