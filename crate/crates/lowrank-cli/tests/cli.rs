use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lowrank"))
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lowrank-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, solver: &str, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let config = format!(
        r#"{{
            "solver": "{solver}",
            "stop": {{ "max_iters": 300 }},
            "instance": {{
                "kind": "target_least_squares",
                "m": 10, "n": 8,
                "target_rank": 2, "rank_bound": 2,
                "seed": {seed}
            }}
        }}"#
    );
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn solve_writes_trace_and_summary() {
    let dir = work_dir("solve");
    let config = write_config(&dir, "run.json", "rfdr", 11);
    let out = dir.join("artifacts");

    let output = bin()
        .args(["solve", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );

    assert!(out.join("trace.jsonl").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"], "stationarity_reached");
    let eps = summary["eps_stationarity"].as_f64().unwrap();
    assert!(summary["final_stationarity"].as_f64().unwrap() <= eps);

    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("StationarityReached"), "{stdout}");
}

#[test]
fn solve_rejects_a_broken_config() {
    let dir = work_dir("badcfg");
    let path = dir.join("bad.json");
    std::fs::write(&path, "{\"solver\": \"rfd\"}").unwrap();
    let output = bin().args(["solve", "--config"]).arg(&path).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("parsing config"), "{stderr}");
}

#[test]
fn compare_emits_the_operation_table() {
    let dir = work_dir("compare");
    let a = write_config(&dir, "a.json", "rfdr", 23);
    let b = write_config(&dir, "b.json", "p2gdr", 23);
    let out = dir.join("cmp");

    let output = bin()
        .args(["compare", "--configs"])
        .arg(&a)
        .arg(&b)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    for name in [
        "trace_0.jsonl",
        "trace_1.jsonl",
        "summary.json",
        "table1.csv",
        "stationarity.svg",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let table = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("solver,"));

    // Mismatched instances are rejected with a nonzero exit.
    let c = write_config(&dir, "c.json", "rfd", 999);
    let output = bin()
        .args(["compare", "--configs"])
        .arg(&a)
        .arg(&c)
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn check_suite_passes() {
    let output = bin()
        .args(["check", "--suite", "projections", "--seed", "3"])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");

    let output = bin()
        .args(["check", "--suite", "no-such-suite"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn bench_apocalypse_reports_the_escape() {
    let output = bin()
        .args(["bench", "--suite", "apocalypse", "--seed", "1"])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("trailing stationarity"), "{stdout}");
    assert!(stdout.contains("rank reductions taken"), "{stdout}");
}
