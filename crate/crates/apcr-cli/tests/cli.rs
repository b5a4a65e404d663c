use std::fs;
use std::process::Command;

fn apcr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_apcr"))
}

#[test]
fn zero_reps_is_config_error() {
    let out = apcr().args(["coverage", "--reps", "0", "--quiet"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("\"error\":\"config\""), "{err}");
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.txt");
    fs::write(&path, "no_such_key = 1\n").unwrap();
    let out = apcr().args(["panel", "--quiet", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "# small run\nreps = 4\ngrid = 50, 100\n").unwrap();
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = apcr()
            .args(["coverage", "--quiet", "--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join("replications.csv").exists());
        summaries.push(fs::read(out_dir.join("summary.csv")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn selftest_passes() {
    let out = apcr().arg("selftest").output().unwrap();
    assert!(out.status.success());
    assert!(!String::from_utf8(out.stdout).unwrap().contains(",fail"));
}

#[test]
fn estimate_writes_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "dim = 30\nreps = 2\ngrid = 40, 80\n").unwrap();
    let out = apcr()
        .args(["estimate", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::metadata(dir.path().join("snapshot.txt")).unwrap().len() > 0);
}

#[test]
fn failed_replications_are_flagged_not_fatal() {
    // The reward floor is out of reach at this scale, so every environment draw fails.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "signal_scale = 0.50000001\nreps = 2\ngrid = 10, 20\n").unwrap();
    let out = apcr().args(["bandit", "--quiet", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("\"warnings\":2"), "{err}");
}
