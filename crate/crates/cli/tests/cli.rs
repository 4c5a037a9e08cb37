use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn interlock(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interlock"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn demo_trace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../traces/demo.jsonl")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_thirty_wavs_and_repeats_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = interlock(dir.path(), &["gen", "--seed", "5", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".wav")).count(), 30);
    assert!(names.contains(&"library.json".to_string()));
    for n in &names {
        let a = std::fs::read(dir.path().join("a").join(n)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(n)).unwrap();
        assert!(a == b, "{n} differs between runs");
    }
    let lib = read_json(&dir.path().join("a/library.json"));
    assert_eq!(lib["seed"], 5);
}

#[test]
fn gen_rejects_a_fractional_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = interlock(dir.path(), &["gen", "--tempo", "127", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("NonIntegerGrid"));
    assert!(!dir.path().join("x/library.json").exists());
}

#[test]
fn check_passes_the_generated_library_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&interlock(dir.path(), &["gen", "--out", "lib"])), 0);
    let o = interlock(dir.path(), &["check", "--library", "lib"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("153 pairs"));
    let report = read_json(&dir.path().join("lib/compat_report.json"));
    assert_eq!(report["pass"], true);
}

#[test]
fn check_names_an_injected_clash() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&interlock(dir.path(), &["gen", "--out", "lib"])), 0);
    let path = dir.path().join("lib/library.json");
    let mut lib = read_json(&path);
    // B against C, held for whole measures: interval class 1 everywhere.
    for (i, pitch) in [(0, 71), (1, 72)] {
        let events: Vec<Value> = (0..8)
            .map(|m| json!({"onset_pulse": m * 16, "duration_pulses": 16, "pitch": pitch, "velocity": 0.8}))
            .collect();
        lib["collages"][i]["pattern"]["events"] = Value::Array(events);
    }
    std::fs::write(&path, serde_json::to_string(&lib).unwrap()).unwrap();
    let o = interlock(dir.path(), &["check", "--library", "lib/library.json"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("C01/C02"), "{err}");
    assert!(err.contains("offset"), "{err}");
    assert_eq!(read_json(&dir.path().join("lib/compat_report.json"))["pass"], false);
}

#[test]
fn check_without_a_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&interlock(dir.path(), &["check", "--library", "nowhere"])), 2);
}

#[test]
fn render_trace_writes_wav_events_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let trace = demo_trace();
    let o = interlock(
        dir.path(),
        &["render-trace", "--trace", trace.to_str().unwrap(), "--measures", "40", "--out", "out/demo.wav"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let wav = std::fs::read(dir.path().join("out/demo.wav")).unwrap();
    assert_eq!(wav.len(), 44 + 40 * 84_000 * 4);
    let summary = read_json(&dir.path().join("out/demo.summary.json"));
    assert_eq!(summary["clipped_samples"], 0);
    assert_eq!(summary["frames"], 40 * 84_000);
    let log = std::fs::read_to_string(dir.path().join("out/demo.events.jsonl")).unwrap();
    let events: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(events.iter().any(|e| e["kind"] == "BellStrike" && e["station"] == 1));
    assert!(events.windows(2).all(|w| w[0]["at_sample"].as_u64() <= w[1]["at_sample"].as_u64()));
}

#[test]
fn render_trace_with_a_loaded_library_matches_generation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&interlock(dir.path(), &["gen", "--out", "lib"])), 0);
    let trace = demo_trace();
    let t = trace.to_str().unwrap();
    let a = interlock(dir.path(), &["render-trace", "--trace", t, "--measures", "12", "--out", "a.wav"]);
    let b = interlock(
        dir.path(),
        &["render-trace", "--trace", t, "--measures", "12", "--out", "b.wav", "--library", "lib"],
    );
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert!(std::fs::read(dir.path().join("a.wav")).unwrap() == std::fs::read(dir.path().join("b.wav")).unwrap());
}

#[test]
fn render_trace_reports_parse_errors_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("t.jsonl"),
        "{\"t_ms\":0,\"event\":\"launch\",\"station\":1}\n{\"t_ms\":5,\"event\":\"launch\",\"station\":9}\n",
    )
    .unwrap();
    let o = interlock(dir.path(), &["render-trace", "--trace", "t.jsonl", "--measures", "4", "--out", "t.wav"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("TraceParseError at line 2"));
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let o = interlock(
            dir.path(),
            &["simulate", "--arrival-rate", "12", "--duration", "120", "--seed", "9", "--trace-out", name, "--trace-only"],
        );
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.jsonl")).unwrap());
    assert!(a.lines().count() > 5);
    let o = interlock(
        dir.path(),
        &["simulate", "--arrival-rate", "4", "--duration", "30", "--seed", "2", "--out", "s.wav"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("s.summary.json").exists());
    assert_eq!(code(&interlock(dir.path(), &["simulate", "--arrival-rate", "-1", "--duration", "5"])), 2);
}

fn http(port: u16, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    Some(resp)
}

#[test]
fn serve_accepts_a_launch() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"realtime": false, "log_path": "session.jsonl"}"#).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_interlock"))
        .arg("--workdir")
        .arg(dir.path())
        .args(["serve", "--config", "cfg.json", "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let body = r#"{"station":2}"#;
    let req = format!(
        "POST /launch HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let deadline = Instant::now() + Duration::from_secs(30);
    let resp = loop {
        if let Some(r) = http(port, &req) {
            break r;
        }
        assert!(Instant::now() < deadline, "server never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""accepted":true"#), "{resp}");
    assert!(resp.contains(r#""loop_id":"C"#) && resp.contains(r#""bell_note":""#), "{resp}");
    let log = std::fs::read_to_string(dir.path().join("session.jsonl")).unwrap();
    assert!(log.contains(r#""request":{"station":2}"#), "{log}");
}
