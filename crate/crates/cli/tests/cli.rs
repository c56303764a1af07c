use std::fs;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_target-tracking"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &std::path::Path, policy: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(
        &path,
        format!(
            r#"
[experiment]
policy = "{policy}"
seeds = [0, 1]
explore_len = 20

[scenario]
horizon = 150
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_writes_ledgers_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "model2");
    let out = dir.path().join("out");
    let o = bin(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["seed_0.csv", "seed_1.csv", "aggregate.csv"] {
        assert!(out.join("model2").join(f).is_file(), "missing {f}");
    }
    let ledger = fs::read_to_string(out.join("model2/seed_0.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 151);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "model1");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = bin(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seeds",
            "3..5",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(
            ["seed_3.csv", "seed_4.csv", "aggregate.csv"]
                .map(|f| fs::read(out.join("model1").join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn policy_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "model2");
    let out = dir.path().join("out");
    let o = bin(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--policy",
        "oracle",
        "--policy",
        "fixed",
        "--seeds",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("oracle/seed_0.csv").is_file());
    assert!(out.join("fixed/seed_0.csv").is_file());
    assert!(!out.join("model2").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("oracle: T=150"), "{stdout}");
}

#[test]
fn bad_inputs_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "model2");
    let c = config.to_str().unwrap();
    assert!(!bin(&["run", "--config", c, "--policy", "greedy"])
        .status
        .success());
    assert!(!bin(&["run", "--config", c, "--seeds", "5..2"])
        .status
        .success());
    assert!(!bin(&["run", "--config", "/nonexistent/experiment.toml"])
        .status
        .success());
    assert!(!bin(&["verify", "--suite", "speed"]).status.success());
    fs::write(&config, "[experiment]\nlambda = -1.0\n").unwrap();
    assert!(!bin(&["run", "--config", c]).status.success());
}

#[test]
fn verify_reports_measured_values() {
    let o = bin(&["verify", "--suite", "decomposition", "--quick"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("[PASS]  1 decomposition identity: max error"),
        "{stdout}"
    );
    let o = bin(&["verify", "--suite", "incremental"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 passed, 0 failed"));
}
