use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn railfraud(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_railfraud")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    synth_n(dir, "30", extra)
}

fn synth_n(dir: &Path, n: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(dir), "--n-stations", n, "--days", "2", "--journeys-per-day", "6000"];
    args.extend_from_slice(extra);
    let out = railfraud(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn missing_input_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = railfraud(&["score", "--taps", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error: kind="), "{}", stderr(&out));
}

#[test]
fn invalid_injection_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = railfraud(&["synth", "--out", p(dir.path()), "--n-stations", "10", "--inject", "40:BlackHole:0.5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("kind=injection_out_of_range"), "{}", stderr(&out));
}

#[test]
fn malformed_lines_breach_the_reject_limit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let text = fs::read_to_string(data.join("taps.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for (i, l) in lines.iter_mut().enumerate().skip(1) {
        if i % 10 == 0 {
            *l = l.replace('T', "?");
        }
    }
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = railfraud(&["score", "--taps", p(&bad), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(out_dir.join("report.json").exists());
    assert!(fs::read_to_string(out_dir.join("rejects.csv")).unwrap().lines().count() > 1);

    let out = railfraud(&["validate", "--taps", p(&bad)]);
    assert_eq!(code(&out), 3);
    let out = railfraud(&["validate", "--taps", p(&bad), "--reject-rate-max", "0.5"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn score_outputs_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &["--seed", "5", "--inject", "3:BlackHole:0.8", "--inject", "8:GhostStation:0.8"]);
    let out_dir = dir.path().join("o");
    let out = railfraud(&["score", "--taps", p(&data.join("taps.csv")), "--out", p(&out_dir), "--top-k", "7", "--role-dump"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["report.json", "report.csv", "summary.txt", "rejects.csv", "features.csv", "detector_scores.csv", "roles.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let csv_rows = fs::read_to_string(out_dir.join("report.csv")).unwrap().lines().count() - 1;
    assert_eq!(csv_rows, 30);
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    let table = summary.lines().skip_while(|l| !l.trim_start().starts_with("pos")).count() - 1;
    assert_eq!(table, 7);

    let report = out_dir.join("report.json");
    let truth = data.join("truth.json");
    let out = railfraud(&["eval", "--report", p(&report), "--truth", p(&truth), "--k", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("recall@5"));
    let out = railfraud(&["eval", "--report", p(&report), "--truth", p(&truth), "--k", "1", "--floor", "1.0"]);
    assert_eq!(code(&out), 4);

    let other = dir.path().join("other");
    synth_n(&other, "31", &[]);
    let out = railfraud(&["eval", "--report", p(&report), "--truth", p(&other.join("truth.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("kind=universe_mismatch"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, &["--seed", "11", "--inject", "2:FunctionLoss:0.6"]);
    synth(&b, &["--seed", "11", "--inject", "2:FunctionLoss:0.6"]);
    assert_eq!(digest(&a.join("taps.csv")), digest(&b.join("taps.csv")));
    assert_eq!(digest(&a.join("truth.json")), digest(&b.join("truth.json")));
}

#[test]
fn toml_config_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let out_dir = dir.path().join("o");
    let config = dir.path().join("run.toml");
    let body = format!(
        "top_k = 4\nout = {:?}\nwindow_start = \"2024-03-04\"\n\n[input]\ntaps = {:?}\n\n[detectors.lof]\nk = 8\n",
        p(&out_dir),
        p(&data.join("taps.csv"))
    );
    fs::write(&config, body).unwrap();
    let out = railfraud(&["score", "--config", p(&config), "--top-k", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    let table = summary.lines().skip_while(|l| !l.trim_start().starts_with("pos")).count() - 1;
    assert_eq!(table, 3);

    fs::write(&config, "top_k = \"many\"\n").unwrap();
    let out = railfraud(&["score", "--config", p(&config)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("kind=invalid_config"), "{}", stderr(&out));
}
