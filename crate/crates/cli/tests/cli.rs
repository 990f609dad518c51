use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/flow.cfg");

fn roughflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughflow"))
        .args(args)
        .env_remove("ROUGHFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = roughflow(&["teleport"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("unknown scenario"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn invalid_hurst_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "scenario = sample-fbm\n\n[noise]\nhurst = 0.3\n").unwrap();
    let out = roughflow(&["sample-fbm", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("hurst"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "[noise]\nhurts = 0.4\n").unwrap();
    let out = roughflow(&["sample-fbm", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn shipped_config_echoes_unchanged() {
    let out = roughflow(&["flow", "--config", CONFIG, "--echo"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(CONFIG).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
}

#[test]
fn echo_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cfg");
    std::fs::write(
        &path,
        "[noise]\nhurst = 0.4\nalpha = 0.38\nsteps = 64\n[model]\nsolver = picard\n",
    )
    .unwrap();
    let once = roughflow(&["solve", "--config", path.to_str().unwrap(), "--echo"]);
    assert_eq!(once.status.code(), Some(0), "{}", stderr(&once));
    let echoed = dir.path().join("echoed.cfg");
    std::fs::write(&echoed, &once.stdout).unwrap();
    let twice = roughflow(&["solve", "--config", echoed.to_str().unwrap(), "--echo"]);
    assert_eq!(once.stdout, twice.stdout);
}

fn sample(dir: &Path, name: &str, seed: &str, threads: &str) -> Vec<u8> {
    let file = dir.join(name);
    let out = roughflow(&[
        "sample-fbm",
        "--hurst",
        "0.4",
        "--steps",
        "64",
        "--oversample",
        "2",
        "--count",
        "3",
        "--dim",
        "2",
        "--seed",
        seed,
        "--threads",
        threads,
        "--out",
        file.to_str().unwrap(),
        "--config",
        dir.join("alpha.cfg").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    std::fs::read(file).unwrap()
}

#[test]
fn sampling_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("alpha.cfg"), "[noise]\nalpha = 0.36\n").unwrap();
    let a = sample(dir.path(), "a.csv", "11", "1");
    let b = sample(dir.path(), "b.csv", "11", "4");
    let c = sample(dir.path(), "c.csv", "12", "1");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(
        text.starts_with("path,t,W1,W2\n"),
        "{}",
        &text[..40.min(text.len())]
    );
    // rows are written on the oversampled grid
    assert_eq!(text.lines().count(), 1 + 3 * (64 * 2 + 1));
}

#[test]
fn solve_writes_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.csv");
    let run = |file: &Path| {
        let out = roughflow(&[
            "solve",
            "--steps",
            "128",
            "--seed",
            "5",
            "--out",
            file.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        std::fs::read(file).unwrap()
    };
    let first = run(&file);
    let second = run(&dir.path().join("y.csv"));
    assert_eq!(first, second);
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 1 + 129);
}

#[test]
fn flow_scenario_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("flow");
    let out = roughflow(&[
        "flow",
        "--config",
        CONFIG,
        "--steps",
        "256",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.code() == Some(0) || out.status.code() == Some(1),
        "{}",
        stderr(&out)
    );
    for name in [
        "psi.csv",
        "derivative.csv",
        "moments.json",
        "uniqueness.json",
        "report.json",
    ] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["scenario"], "flow");
}
