use std::path::Path;
use std::process::{Command, Output};

use brickwall::experiment::CSV_HEADER;

fn brickwall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brickwall"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn plan_lists_every_step() {
    let out = brickwall(&["plan", "--seed", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# strategy=brick f=16 stride=1 L=80"));
    assert_eq!(lines[1], "k\tt\tt_prev\toffset\tsegments");
    assert_eq!(lines.len(), 2 + 50);
    assert_eq!(
        lines[2],
        "0\t1000\t980\t0\t[0,16) [16,32) [32,48) [48,64) [64,80)"
    );
    assert_eq!(
        lines[3],
        "1\t980\t960\t1\t[0,1) [1,17) [17,33) [33,49) [49,65) [65,80)"
    );
    assert!(lines[51].starts_with("49\t20\t0\t1\t"));
}

#[test]
fn covariance_row_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "strategy = concat\nF = 32\nS = 10\n");
    let out = brickwall(&["covariance", "--config", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rows.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        CSV_HEADER
    );
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(&records[0][0], "concat");
    assert_eq!(&records[0][11], "0");
}

#[test]
fn compare_writes_json_lines_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "F = 16\nf = 8\nS = 5\nd = 1\n");
    let dest = dir.path().join("rows.jsonl");
    let out = brickwall(&[
        "compare",
        "--config",
        &cfg,
        "--json",
        "--out",
        dest.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dest).unwrap();
    let names: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["strategy"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(names, ["untiled", "concat", "sliding_window", "brick"]);
}

#[test]
fn sweep_accepts_custom_strides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "F = 16\nf = 8\nS = 5\n");
    let out = brickwall(&["sweep", "--config", &cfg, "--strides", "0,2,4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let strides: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(strides, ["0", "2", "4"]);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["stride = 16\n", "colour = red\n", "rho = 1.5\n"] {
        let cfg = write_config(dir.path(), bad);
        let out = brickwall(&["covariance", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(
        brickwall(&["plan", "--config", "/nonexistent/exp.cfg"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        brickwall(&["plan", "--workers", "0"]).status.code(),
        Some(2)
    );
}

#[test]
fn stochastic_exact_propagation_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eta = 1\nS = 5\n");
    let out = brickwall(&["covariance", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample"));
}
