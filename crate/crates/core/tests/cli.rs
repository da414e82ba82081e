use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fcm_core::scorers::LcsRatio;
use fcm_core::wire::HttpServer;

fn fcm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcm"))
        .current_dir(dir)
        .env_remove("FCM_SCORER_URL")
        .env_remove("FCM_SUMMARIZER_URL")
        .args(args)
        .output()
        .expect("spawn fcm")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fcm(dir, args);
    assert!(
        out.status.success(),
        "fcm {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path) {
    ok(
        dir,
        &[
            "gen-data", "--seed", "3", "--n", "40", "--out", "train.jsonl", "--dev-n", "10", "--dev-out",
            "dev.jsonl", "--test-n", "10", "--test-out", "test.jsonl",
        ],
    );
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path());
    gen(b.path());
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let lines = fs::read_to_string(a.path().join("train.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 40);
}

#[test]
fn ttest_of_equal_vectors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), "[0.5, 0.7, 0.9]").unwrap();
    fs::write(dir.path().join("b.json"), r#"{"scores": [0.5, 0.7, 0.9]}"#).unwrap();
    let out = ok(dir.path(), &["ttest", "--a", "a.json", "--b", "b.json"]);
    assert_eq!(out.trim(), "t=0.0 df=2 p=1.0 significant_at_95=false");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let out = fcm(dir.path(), &["train-fcm", "--corpus", "train.jsonl", "--dev", "dev.jsonl", "--init", "x.json"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(dir.path().join("bad.json"), r#"{"model": {"d": 4, "depth": 2}}"#).unwrap();
    let out = fcm(dir.path(), &["--config", "bad.json", "gen-data", "--out", "t.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fcm(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(fcm(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), "[0.5, 0.7").unwrap();
    let out = fcm(dir.path(), &["ttest", "--a", "a.json", "--b", "a.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    let common = ["--beam", "3", "--nbest", "3"];
    let mut ce = vec![
        "train-ce", "--corpus", "train.jsonl", "--dev", "dev.jsonl", "--out", "ce.json", "--log", "ce.jsonl", "--d",
        "6", "--iterations", "60", "--checkpoint-every", "20", "--scorer", "weighted-f1",
    ];
    ce.extend(common);
    ok(d, &ce);
    assert_eq!(fs::read_to_string(d.join("ce.jsonl")).unwrap().lines().count(), 3);

    let mut ft = vec![
        "train-fcm", "--corpus", "train.jsonl", "--dev", "dev.jsonl", "--init", "ce.json", "--out", "fcm.json",
        "--log", "fcm.jsonl", "--iterations", "10", "--checkpoint-every", "5", "--scorer", "lcs",
        "--deletion-limit", "1.0",
    ];
    ft.extend(common);
    ok(d, &ft);
    assert!(d.join("fcm.json").exists());

    ok(d, &["decode", "--model", "fcm.json", "--corpus", "test.jsonl", "--out", "hyp.jsonl", "--beam", "3", "--nbest", "2"]);
    let decoded = fs::read_to_string(d.join("hyp.jsonl")).unwrap();
    assert_eq!(decoded.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(decoded.lines().next().unwrap()).unwrap();
    assert!(first["text"].is_string() && first["nbest"].as_array().is_some_and(|n| !n.is_empty()));

    // remote scorer over HTTP agrees with the same scorer in-process
    let srv = HttpServer::scorer(LcsRatio).unwrap();
    let url = srv.url();
    ok(d, &["eval-utt", "--hyp", "hyp.jsonl", "--scorer", "lcs", "--csv", "local.csv", "--scores", "local.json"]);
    ok(
        d,
        &[
            "eval-utt", "--hyp", "hyp.jsonl", "--scorer", "remote", "--scorer-url", &url, "--csv", "remote.csv",
            "--markdown", "remote.md", "--scores", "remote.json",
        ],
    );
    assert_eq!(fs::read(d.join("local.json")).unwrap(), fs::read(d.join("remote.json")).unwrap());
    assert_eq!(srv.requests().len(), 10);
    let csv = fs::read_to_string(d.join("remote.csv")).unwrap();
    let metrics: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        metrics,
        ["metric", "wer", "substitutions", "deletions", "insertions", "avg_consistency", "consistent_ratio"]
    );

    let out = ok(d, &["ttest", "--a", "local.json", "--b", "remote.json"]);
    assert!(out.starts_with("t=0.0 df=9 p=1.0"), "{out}");

    ok(d, &["eval-sum", "--reference", "test.jsonl", "--scorer", "weighted-f1", "--out", "a.json"]);
    ok(d, &["eval-sum", "--reference", "test.jsonl", "--scorer", "weighted-f1", "--out", "b.json"]);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    let mock = HttpServer::mock_summarizer().unwrap();
    ok(
        d,
        &[
            "eval-sum", "--reference", "test.jsonl", "--scorer", "weighted-f1", "--summarizer", "http",
            "--summarizer-url", &mock.url(), "--out", "c.json",
        ],
    );
    let a: serde_json::Value = serde_json::from_slice(&fs::read(d.join("a.json")).unwrap()).unwrap();
    let c: serde_json::Value = serde_json::from_slice(&fs::read(d.join("c.json")).unwrap()).unwrap();
    assert_eq!(a["scores"], c["scores"]);
}
