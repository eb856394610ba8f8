//! Contract tests for the binary: exit codes, config handling, artifact
//! layout, and the manifest's promise that a run can be repeated exactly.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output};

fn seqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqlab"))
        .args(args)
        .env_remove("SEQLAB_DATA")
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// Small enough to train in well under a second.
const TINY: &str = r#"
seed = 11

[data]
digit_pool = 80
digit_test = 20

[split]
scheme = "counted"
original_count = 50
adversary_count = 20

[original]
hidden = 6
epochs = 2
batch = 10

[classification]
hidden = 6
hard_epochs = 2
soft_epochs = 2
batch = 10
leaky_time = 27
"#;

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[original]\nhiddn = 4\n").unwrap();
    let out = seqlab(&[
        "train-oracle",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("hiddn"), "{}", stderr_of(&out));
}

#[test]
fn malformed_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    std::fs::write(&cfg, "seed = 1\nnot toml at all\n").unwrap();
    let out = seqlab(&[
        "train-oracle",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("line 2"), "{}", stderr_of(&out));
}

#[test]
fn missing_data_root_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqlab(&[
        "train-oracle",
        "--preset",
        "mnist-mini",
        "--data-root",
        dir.path().join("nowhere").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_ref_documents_every_section() {
    let out = seqlab(&["config-ref"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for section in [
        "[data]", "[split]", "[original]", "[oracle]", "[leak]",
        "[classification]", "[regression]", "[sweep]",
    ] {
        assert!(text.contains(section), "missing {section}");
    }
}

#[test]
fn eval_without_checkpoints_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqlab(&["eval", "--out", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("nothing to evaluate"),
        "{}",
        stderr_of(&out)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn extraction_run_leaves_complete_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run_a = dir.path().join("a");
    let out = seqlab(&[
        "extract-cls",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run_a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    for name in [
        "manifest.json",
        "config.resolved.toml",
        "original.model.json",
        "substitute.model.json",
        "extraction.json",
        "extraction.metrics.csv",
    ] {
        assert!(run_a.join(name).is_file(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&run_a, "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "extract-cls");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["classification"]["leaky_time"], 27);

    let run_b = dir.path().join("b");
    let rerun = seqlab(&[
        "extract-cls",
        "--config",
        run_a.join("config.resolved.toml").to_str().unwrap(),
        "--out",
        run_b.to_str().unwrap(),
    ]);
    assert_eq!(rerun.status.code(), Some(0), "{}", stderr_of(&rerun));
    assert_eq!(
        read(&run_a, "extraction.metrics.csv"),
        read(&run_b, "extraction.metrics.csv")
    );
    assert_eq!(
        read(&run_a, "substitute.model.json"),
        read(&run_b, "substitute.model.json")
    );
}

#[test]
fn selftest_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("st");
    let out = seqlab(&["selftest", "--out", run.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS] gradients"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_slice(&read(&run, "selftest.json")).unwrap();
    assert_eq!(report["all_passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 10);
}

#[test]
fn serve_oracle_answers_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("srv");
    let mut child = Command::new(env!("CARGO_BIN_EXE_seqlab"))
        .env_remove("SEQLAB_DATA")
        .args([
            "serve-oracle",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
            "--listen",
            "127.0.0.1:0",
            "--for-seconds",
            "20",
        ])
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();

    let serve_file = run.join("serve.json");
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(30);
    let addr = loop {
        if serve_file.is_file() {
            let v: serde_json::Value =
                serde_json::from_slice(&std::fs::read(&serve_file).unwrap()).unwrap();
            break v["listening"].as_str().unwrap().to_string();
        }
        assert!(
            std::time::Instant::now() < deadline,
            "server never published its address"
        );
        std::thread::sleep(std::time::Duration::from_millis(100));
    };

    let mut stream = TcpStream::connect(&addr).unwrap();
    let inputs: Vec<Vec<f64>> = (0..28).map(|_| vec![0.5; 28]).collect();
    let request = serde_json::json!({ "id": 1, "seq": inputs });
    writeln!(stream, "{request}").unwrap();
    let mut line = String::new();
    BufReader::new(stream.try_clone().unwrap())
        .read_line(&mut line)
        .unwrap();
    let reply: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(reply["id"], 1);
    assert!(reply["outputs"].is_array(), "{reply}");

    child.kill().ok();
    child.wait().ok();
}
