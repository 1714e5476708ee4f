use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;
use uuid::Uuid;

fn learnprof(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_learnprof"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_LOG")
        .env_remove("LEARNPROF_EXPORT_TOKEN")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = learnprof(args, cwd);
    assert!(
        out.status.success(),
        "learnprof {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn power_for_a_single_effect() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&ok(&["--json", "power", "--d", "0.41"], dir.path()));
    assert_eq!(v["rows"][0]["nPerGroup"], 95);
    assert_eq!(v["rows"][0]["nTotal"], 190);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["power"][..],
        &["no-such-command"],
        &["analyze", "bogus"],
        &["simulate", "--metric", "nope"],
    ] {
        let out = learnprof(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn validate_reports_codes_in_text() {
    let fixtures = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"));
    let out = learnprof(&["validate", "invalid/key-mismatch.toml"], fixtures);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("error[key-option-mismatch]"), "{text}");
    assert!(text.ends_with("1 quiz files, 1 errors, 0 warnings\n"), "{text}");

    let clean = ok(&["validate", "book/quizzes", "--oracle-table", "oracle.json"], fixtures);
    assert!(String::from_utf8(clean.stdout).unwrap().contains("2 quiz files, 0 errors"));
}

#[test]
fn summary_interventions() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("interventions.toml");
    std::fs::write(
        &spec,
        r#"
[[interventions]]
name = "strong"
before = { mean = 0.18, n = 593 }
after = { mean = 0.70, n = 543 }

[[interventions]]
name = "weak"
before = { mean = 0.15, n = 311 }
after = { mean = 0.18, n = 4001 }
"#,
    )
    .unwrap();
    let v = json(&ok(&["--json", "interventions", "interventions.toml"], dir.path()));
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["significant"], true);
    assert_eq!(reports[1]["significant"], false);
    assert!((reports[0]["effectSize"].as_f64().unwrap() - 1.24).abs() < 0.02);
    assert!(dir.path().join("out/interventions.json").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[[interventions]]\nname = \"half\"\nbefore = { mean = 0.5, n = 10 }\n")
        .unwrap();
    assert_eq!(learnprof(&["interventions", "bad.toml"], dir.path()).status.code(), Some(1));
}

fn pipeline(dir: &Path) {
    ok(
        &["synth", "--items", "12", "--readers", "400", "--seed", "5", "--retry-rate", "0.2"],
        dir,
    );
    ok(&["build"], dir);
    ok(&["analyze", "ctt", "--best-subset", "2"], dir);
    ok(&["analyze", "dropoff"], dir);
    ok(&["analyze", "irt", "--epochs", "100", "--truth", "truth.json", "--bundle"], dir);
    ok(&["simulate", "--iterations", "20", "--ks", "10,50"], dir);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for file in [
        "events.ndjson",
        "out/ctt.json",
        "out/dropoff.json",
        "out/irt.json",
        "out/stats.json",
        "out/simulation.csv",
    ] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
    let irt = read_json(&a.path().join("out/irt.json"));
    assert!(irt["recovery"]["spearmanBeta"].as_f64().is_some());

    // --stamp adds a generation time, nothing else.
    ok(&["--stamp", "analyze", "ctt"], a.path());
    let stamped = read_json(&a.path().join("out/ctt.json"));
    assert!(stamped["generatedAt"].is_string());
}

#[test]
fn bundle_distributions_sum_to_error_rate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--items", "10", "--readers", "300", "--seed", "2"], dir.path());
    ok(&["build"], dir.path());
    ok(&["analyze", "ctt", "--bundle"], dir.path());
    let stats = read_json(&dir.path().join("out/stats.json"));
    let questions = stats["questions"].as_array().unwrap();
    assert_eq!(questions.len(), 10);
    for q in questions {
        let sum: f64 = q["incorrectAnswerDistribution"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v.as_f64().unwrap())
            .sum();
        let d = q["difficulty"].as_f64().unwrap();
        assert!((sum - (1.0 - d)).abs() < 1e-9, "{}: {sum} vs {}", q["questionId"], 1.0 - d);
    }
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_learnprof"))
        .args(["serve", "--addr", "127.0.0.1:0", "--store", "events.log"])
        .current_dir(dir.path())
        .env("LEARNPROF_EXPORT_TOKEN", "secret")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let _server = Server(child);
    let base = line
        .split_whitespace()
        .nth(2)
        .expect("listening line")
        .to_string();

    let client = reqwest::blocking::Client::new();
    for i in 0..5u128 {
        let body = serde_json::json!({
            "sessionId": Uuid::from_u128(i + 1),
            "quizName": "ch01",
            "commitHash": "0123456789abcdef0123456789abcdef01234567",
            "attempt": 0,
            "clientTimestampMs": 1_700_000_000_000u64,
            "answers": [{
                "questionId": Uuid::from_u128(99),
                "answer": {"type": "ShortAnswer", "text": "rustup"},
                "correct": true,
                "durationMs": 900
            }]
        });
        let resp = client
            .post(format!("{base}/api/answers"))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 200);
    }

    let out = Command::new(env!("CARGO_BIN_EXE_learnprof"))
        .args(["export", "--url", &base, "--out", "-"])
        .current_dir(dir.path())
        .env("LEARNPROF_EXPORT_TOKEN", "secret")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);

    let wrong = Command::new(env!("CARGO_BIN_EXE_learnprof"))
        .args(["export", "--url", &base, "--out", "-"])
        .current_dir(dir.path())
        .env("LEARNPROF_EXPORT_TOKEN", "guess")
        .output()
        .unwrap();
    assert_eq!(wrong.status.code(), Some(1));

    // Reading the log directly gives the same records.
    let local = learnprof(&["export", "--store", "events.log", "--out", "-"], dir.path());
    assert!(local.status.success());
    assert_eq!(String::from_utf8(local.stdout).unwrap(), text);
}
