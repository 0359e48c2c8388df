//! End-to-end runs of the `aoii` binary.

use std::path::Path;
use std::process::{Command, Output};

use aoii_core::cli::{parse_config, run, write_csv, RunOptions, COLUMNS};

const BIN: &str = env!("CARGO_BIN_EXE_aoii");
const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn aoii(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("AOII_THREADS", t),
        None => cmd.env_remove("AOII_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn rows(csv_text: &str) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), COLUMNS);
    r.records().map(|x| x.unwrap()).collect()
}

fn col(rows: &[csv::StringRecord], name: &str) -> Vec<String> {
    let i = COLUMNS.iter().position(|c| *c == name).unwrap();
    rows.iter().map(|r| r[i].to_string()).collect()
}

#[test]
fn golden_p_sweep() {
    let cfg = Path::new(GOLDEN_DIR).join("sweep_p.cfg");
    let expected = std::fs::read_to_string(Path::new(GOLDEN_DIR).join("sweep_p.csv")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    for threads in ["1", "3"] {
        let res = aoii(
            &["sweep-p", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
            Some(threads),
        );
        stdout(&res);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), expected, "AOII_THREADS={threads}");
    }
}

#[test]
fn flags_override_config() {
    let cfg = Path::new(GOLDEN_DIR).join("sweep_p.cfg");
    let text = stdout(&aoii(
        &["solve", "--config", cfg.to_str().unwrap(), "--p", "0.2", "--ps", "0.6"],
        None,
    ));
    // A flag for a swept parameter is taken as the base value; the grid
    // still applies in solve mode.
    let r = rows(&text);
    assert_eq!(r.len(), 3);
    assert!(col(&r, "p_s").iter().all(|v| v == "0.6"));
    assert_eq!(col(&r, "mode"), vec!["solve"; 3]);

    let text = stdout(&aoii(&["solve", "--N", "7", "--p", "0.2", "--ps", "0.6", "--alpha", "0.06"], None));
    let r = rows(&text);
    assert_eq!(col(&r, "thresholds_minus"), vec!["[67,27,16,1,1,1]"]);
    assert_eq!(col(&r, "thresholds_plus"), vec!["[67,28,16,1,1,1]"]);
    assert!(col(&r, "runtime_ms")[0].is_empty());
}

#[test]
fn timing_is_opt_in() {
    let text = stdout(&aoii(
        &["solve", "--N", "4", "--p", "0.2", "--ps", "0.8", "--alpha", "0.1", "--timing"],
        None,
    ));
    let ms: f64 = col(&rows(&text), "runtime_ms")[0].parse().unwrap();
    assert!(ms >= 0.0);
}

#[test]
fn validate_reports_agreement() {
    let args = [
        "validate", "--N", "7", "--p", "0.2", "--ps", "0.8", "--alpha", "0.06", "--horizon", "2000000", "--seed", "5",
    ];
    let a = stdout(&aoii(&args, None));
    let b = stdout(&aoii(&args, Some("2")));
    assert_eq!(a, b);
    let r = rows(&a);
    assert_eq!(col(&r, "rate_within_3se"), vec!["true"]);
    assert_eq!(col(&r, "aoii_within_3se"), vec!["true"]);
    assert_eq!(col(&r, "sim_seed"), vec!["5"]);

    let sim_args: Vec<&str> = std::iter::once("simulate").chain(args[1..].iter().copied()).collect();
    let sim = stdout(&aoii(&sim_args, None));
    let r = rows(&sim);
    assert!(!col(&r, "sim_rate")[0].is_empty());
    assert!(col(&r, "rate_within_3se")[0].is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "N=7\np=0.2\nfoo=1\n").unwrap();
    let out = aoii(&["solve", "--config", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = aoii(&["solve", "--N", "7", "--p", "0.5", "--ps", "0.8", "--alpha", "0.06"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = aoii(&["solve", "--config", "/nonexistent/x.cfg"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = aoii(&["sweep-ps", "--N", "7", "--p", "0.2", "--alpha", "0.06"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = aoii(&["solve", "--N", "7", "--p", "0.2", "--ps", "0.8", "--alpha", "0.06"], Some("zero"));
    assert_eq!(out.status.code(), Some(2));

    let out = aoii(&["solve", "--N", "7", "--p", "0.2", "--ps", "0.8", "--alpha", "0.06", "--m", "30"], None);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn alpha_sweep_saturates() {
    let spec = parse_config(
        "mode=sweep-alpha\nN=7\np=0.2\np_s=0.8\ngrid.alpha=0.02,0.04,0.06,0.1,0.2,0.3,0.4,0.5,0.6",
    )
    .unwrap();
    let rows = run(&spec, RunOptions { timing: false, threads: Some(2) }).unwrap();
    let aoii: Vec<f64> = rows.iter().map(|r| r.solution.aoii).collect();
    assert!(aoii.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{aoii:?}");
    assert!(rows.last().unwrap().solution.unconstrained);
    assert!((aoii[aoii.len() - 1] - aoii[aoii.len() - 2]).abs() < 1e-9);

    let mut buf = Vec::new();
    write_csv(&mut buf, spec.mode, &rows).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows.len() + 1);
}
