use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/kragero")
}

fn twinner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinner")).args(args).output().unwrap()
}

fn run_into(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let out = dir.join(format!("{tag}.json"));
    let events = dir.join(format!("{tag}.csv"));
    let scenario = data_dir().join("scenario.json");
    let o = twinner(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--days",
        "21",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
        "--events",
        events.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (std::fs::read(out).unwrap(), std::fs::read(events).unwrap())
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_into(dir.path(), "a");
    let b = run_into(dir.path(), "b");
    assert_eq!(a, b);
    let result: serde_json::Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(result["days"], 21);
    let csv = String::from_utf8(a.1).unwrap();
    assert!(csv.starts_with("day,agent_id,event_type,detail\n"));
    assert!(csv.contains(",dropped_out,"));
}

#[test]
fn run_writes_default_event_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let scenario = data_dir().join("scenario.json");
    let o = twinner(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--days",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(dir.path().join("r.events.csv").exists());
}

#[test]
fn seed_override_changes_population() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data_dir().join("scenario.json");
    let mut outputs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("{seed}.json"));
        let o = twinner(&[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--days",
            "1",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        outputs.push(std::fs::read(out).unwrap());
    }
    assert_ne!(outputs[0], outputs[1]);
}

#[test]
fn usage_errors_exit_2() {
    let o = twinner(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--scenario"));
    assert_eq!(twinner(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(twinner(&["serve", "--llm", "gpt"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinner(&[
        "run",
        "--scenario",
        "/nonexistent.json",
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "));
}

#[test]
fn synth_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let m = data_dir().join("marginals.json");
    let o = twinner(&[
        "synth",
        "--marginals",
        m.to_str().unwrap(),
        "--size",
        "100",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert!(text.starts_with("person_id,household_id,age,"));

    let b = data_dir().join("buildings.csv");
    let o = twinner(&[
        "synth",
        "--marginals",
        m.to_str().unwrap(),
        "--size",
        "100",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--buildings",
        b.to_str().unwrap(),
        "--include-children",
    ]);
    assert!(o.status.success());
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(rows.len() >= 100);
    assert!(rows.iter().all(|r| !r[7].is_empty()));
}
