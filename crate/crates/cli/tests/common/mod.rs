#![allow(dead_code)]

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn desk() -> PathBuf {
    fixtures().join("desk")
}

pub fn effiset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effiset"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = effiset(args);
    assert!(
        out.status.success(),
        "effiset {:?} failed ({:?}):\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Writes a config using the desk replay responses.
pub fn desk_config(dir: &Path, repeats: usize) -> PathBuf {
    let path = dir.join("effiset.toml");
    let text = format!(
        "[general]\nenvironment_label = \"test-host\"\n\n[generation]\nproviders = [\"desk\"]\nn_per_provider = 2\n\n\
         [profile]\nrepeats = {repeats}\n\n[providers.desk]\nkind = \"replay\"\nlabel = \"desk-model\"\nreplay_root = \"{}\"\n",
        desk().join("replay").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs every stage on the desk corpus and returns the artifact paths in stage order.
pub fn run_desk_pipeline(dir: &Path, repeats: usize) -> Vec<PathBuf> {
    let cfg = desk_config(dir, repeats);
    let c = s(&cfg);
    let p = |name: &str| dir.join(name);
    let source = desk().join("source.jsonl");
    ok(&["--config", c, "ingest", "--in", s(&source), "--out", s(&p("raw_tasks.jsonl"))]);
    ok(&["--config", c, "augment-tests", "--in", s(&p("raw_tasks.jsonl")), "--out", s(&p("tasks.jsonl"))]);
    ok(&["--config", c, "generate", "--in", s(&p("tasks.jsonl")), "--out", s(&p("candidates.jsonl"))]);
    ok(&["--config", c, "profile", "--in", s(&p("tasks.jsonl")), "--out", s(&p("initial_profiles.jsonl"))]);
    ok(&[
        "--config", c, "profile", "--in", s(&p("tasks.jsonl")), "--candidates", s(&p("candidates.jsonl")),
        "--out", s(&p("candidate_profiles.jsonl")),
    ]);
    ok(&[
        "--config", c, "select", "--in", s(&p("tasks.jsonl")), "--profiles", s(&p("initial_profiles.jsonl")),
        "--profiles", s(&p("candidate_profiles.jsonl")), "--out", s(&p("selected.jsonl")),
    ]);
    ok(&["--config", c, "emit", "--in", s(&p("selected.jsonl")), "--out", s(&p("dataset.jsonl"))]);
    [
        "raw_tasks.jsonl",
        "tasks.jsonl",
        "candidates.jsonl",
        "initial_profiles.jsonl",
        "candidate_profiles.jsonl",
        "selected.jsonl",
        "dataset.jsonl",
    ]
    .iter()
    .map(|n| p(n))
    .collect()
}

/// Header and records of an artifact file.
pub fn read_artifact(path: &Path) -> (Value, Vec<Value>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = serde_json::from_str(lines.next().expect("header line")).unwrap();
    let records = lines.filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect();
    (header, records)
}

/// Fields holding measurements, which legitimately differ between runs.
pub const MEASURED_FIELDS: &[&str] = &[
    "wall_time_s", "samples", "peak_mb", "et_s", "mu_mb", "tmu_mbs", "net", "nmu", "ntmu", "baseline_mb",
];

/// Paths at which two JSON values differ, skipping object keys named in `ignore`.
pub fn json_diff(a: &Value, b: &Value, ignore: &[&str]) -> Vec<String> {
    fn walk(a: &Value, b: &Value, path: String, ignore: &[&str], out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    if ignore.contains(&k.as_str()) {
                        continue;
                    }
                    match (x.get(k), y.get(k)) {
                        (Some(va), Some(vb)) => walk(va, vb, format!("{path}.{k}"), ignore, out),
                        _ => out.push(format!("{path}.{k} (present on one side only)")),
                    }
                }
            }
            (Value::Array(x), Value::Array(y)) => {
                if x.len() != y.len() {
                    out.push(format!("{path} (length {} vs {})", x.len(), y.len()));
                    return;
                }
                for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                    walk(va, vb, format!("{path}[{i}]"), ignore, out);
                }
            }
            _ if a != b => out.push(format!("{path}: {a} vs {b}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, String::new(), ignore, &mut out);
    out
}
