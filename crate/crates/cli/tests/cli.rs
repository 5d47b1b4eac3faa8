use std::path::Path;
use std::process::{Command, Output};

fn depeg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depeg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = depeg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    depeg(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_runs_and_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |s: &str| tmp.path().join(s);
    ok(&[
        "simulate",
        "--seed",
        "3",
        "--days",
        "6",
        "--depeg-day",
        "3",
        "--out-dir",
        p(&d("train")),
    ]);
    ok(&[
        "simulate",
        "--seed",
        "4",
        "--days",
        "6",
        "--depeg-day",
        "3",
        "--out-dir",
        p(&d("test")),
    ]);
    ok(&["metrics", "--input", p(&d("train")), "--out-dir", p(&d("metrics"))]);
    assert!(d("metrics/metrics/usdc-dai/shannonsEntropy.csv").exists());
    ok(&["label", "--input", p(&d("train")), "--out-dir", p(&d("labels"))]);
    let labels = std::fs::read_to_string(d("labels/labels.csv")).unwrap();
    assert!(labels.starts_with("ts,pool_id,deviation\n"));
    assert!(labels.lines().count() > 1);

    ok(&[
        "tune",
        "--input",
        p(&d("train")),
        "--metrics",
        "netSwapFlow,shannonsEntropy",
        "--out-dir",
        p(&d("tuned")),
    ]);
    ok(&[
        "score",
        "--input",
        p(&d("test")),
        "--tuned",
        p(&d("tuned/tuned.json")),
        "--out-dir",
        p(&d("scores")),
    ]);
    let scores = std::fs::read_to_string(d("scores/scores.csv")).unwrap();
    assert!(scores.starts_with("pool,metric,F,P,R,alpha,beta,kappa\n"));
    assert_eq!(scores.lines().count(), 3);
    let report = ok(&["report", "--run", p(&d("scores")), "--out-dir", p(&d("report"))]);
    assert!(report.contains("Pool results") && report.contains("Lead times"));

    for stage in ["train", "metrics", "labels", "tuned", "scores"] {
        assert!(ok(&["verify", p(&d(stage).join("manifest.json"))]).starts_with("ok"));
    }
    std::fs::write(d("scores/scores.csv"), "tampered").unwrap();
    assert_eq!(code(&["verify", p(&d("scores/manifest.json"))]), 2);
}

#[test]
fn identical_seeds_give_identical_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        ok(&[
            "simulate",
            "--seed",
            seed,
            "--days",
            "2",
            "--depeg-day",
            "1",
            "--out-dir",
            p(&dir),
        ]);
        ok(&["metrics", "--input", p(&dir), "--out-dir", p(&dir.join("m"))]);
        (
            manifest(&dir)["outputs"].clone(),
            manifest(&dir.join("m"))["outputs"].clone(),
        )
    };
    let a = run("a", "9");
    let b = run("b", "9");
    let c = run("c", "10");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn detect_resumes_from_state() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("x.csv");
    let mut text = String::from("ts,value\n");
    for k in 1..=80u64 {
        let v = if k > 40 { 6.0 } else { 0.0 } + ((k * 7919) % 13) as f64 / 13.0;
        text.push_str(&format!("{},{}\n", k * 3600, v));
    }
    std::fs::write(&series, &text).unwrap();
    let head: String = text.lines().take(41).map(|l| format!("{l}\n")).collect();
    let first = tmp.path().join("first.csv");
    std::fs::write(&first, head).unwrap();

    let whole = tmp.path().join("whole");
    ok(&[
        "detect",
        "--series",
        p(&series),
        "--metric",
        "x",
        "--fit-until",
        "72000",
        "--out-dir",
        p(&whole),
    ]);
    let state = tmp.path().join("state.json");
    let split = tmp.path().join("split");
    ok(&[
        "detect",
        "--series",
        p(&first),
        "--metric",
        "x",
        "--fit-until",
        "72000",
        "--state",
        p(&state),
        "--out-dir",
        p(&split.join("a")),
    ]);
    ok(&[
        "detect",
        "--series",
        p(&series),
        "--metric",
        "x",
        "--state",
        p(&state),
        "--resume",
        "--out-dir",
        p(&split.join("b")),
    ]);

    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    let tail = |s: String| s.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>();
    for f in ["changepoints.csv", "runlength.csv"] {
        let joined = read(&split.join("a").join(f)) + &tail(read(&split.join("b").join(f)));
        assert_eq!(joined, read(&whole.join(f)), "{f}");
    }
    assert!(read(&whole.join("changepoints.csv")).lines().count() > 1);
}

#[test]
fn constant_series_has_no_changepoints() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("flat.csv");
    let text: String = std::iter::once("ts,value\n".to_string())
        .chain((1..=50).map(|k| format!("{},1.5\n", k * 3600)))
        .collect();
    std::fs::write(&series, text).unwrap();
    ok(&["detect", "--series", p(&series), "--out-dir", p(tmp.path())]);
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("changepoints.csv")).unwrap(),
        "ts,step,run_length,probability\n"
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["detect", "--series", "x.csv", "--resume"]), 1);
    assert_eq!(code(&["metrics", "--input", p(tmp.path())]), 1);
    assert_eq!(code(&["--help"]), 0);

    let series = tmp.path().join("s.csv");
    std::fs::write(&series, "ts,value\n1,1\n2,2\n").unwrap();
    let missing = tmp.path().join("missing.json");
    assert_eq!(
        code(&[
            "detect",
            "--series",
            p(&series),
            "--state",
            p(&missing),
            "--resume",
            "--out-dir",
            p(tmp.path())
        ]),
        2
    );

    std::fs::write(&series, "ts,value\n2,1\n1,2\n").unwrap();
    let out = depeg(&["detect", "--series", p(&series), "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains(":3:"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"pools": [{"pool_id": "p", "tokens": ["A"], "amp": 10, "fee": 0}]}"#,
    )
    .unwrap();
    assert_eq!(code(&["--config", p(&cfg), "metrics", "--input", p(tmp.path())]), 2);
}
