mod common;

use common::*;
use effiset_core::exec::ExecStatus;
use effiset_core::format::{self, ArtifactKind};
use effiset_core::language::Language;
use effiset_core::metrics::EfficiencyMetrics;
use effiset_core::provider::CandidateSolution;
use effiset_core::report::TaskResult;
use effiset_core::task::Task;
use std::collections::BTreeMap;
use std::path::Path;

fn desk_tasks(dir: &Path) -> Vec<Task> {
    let out = dir.join("desk_tasks.jsonl");
    ok(&["ingest", "--in", s(&desk().join("source.jsonl")), "--out", s(&out)]);
    format::read_file(&out, ArtifactKind::Tasks).unwrap()
}

fn candidate(task: &str, i: usize, code: &str) -> CandidateSolution {
    CandidateSolution {
        task_id: task.into(),
        source_code: code.into(),
        provider_label: "fixture".into(),
        sample_index: i,
        prompt_fingerprint: "none".into(),
    }
}

fn error_json(out: &std::process::Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr is not a JSON error: {stderr}"))
}

#[test]
fn profile_two_tasks_two_candidates_each() {
    let dir = tempfile::tempdir().unwrap();
    let tasks: Vec<Task> = desk_tasks(dir.path()).into_iter().filter(|t| t.id == "two_sum" || t.id == "pair_count").collect();
    let tasks_path = dir.path().join("tasks.jsonl");
    format::write_file(&tasks_path, ArtifactKind::Tasks, &tasks).unwrap();
    let cands: Vec<CandidateSolution> = tasks
        .iter()
        .flat_map(|t| [candidate(&t.id, 0, &t.initial_solution), candidate(&t.id, 1, "def broken(:\n    pass\n")])
        .collect();
    let cpath = dir.path().join("cands.jsonl");
    format::write_file(&cpath, ArtifactKind::Candidates, &cands).unwrap();
    let out = dir.path().join("profiles.jsonl");
    ok(&["profile", "--in", s(&tasks_path), "--candidates", s(&cpath), "--out", s(&out), "--repeats", "1"]);
    let (header, records) = read_artifact(&out);
    assert_eq!(header["kind"], "profiles");
    assert_eq!(records.len(), 4);
    let statuses: Vec<&str> = records.iter().map(|r| r["runs"][0]["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["passed", "compile_error", "passed", "compile_error"]);
    // samples are serialized as [t, rss] pairs
    let sample = &records[0]["runs"][0]["samples"][0];
    assert!(sample.is_array() && sample.as_array().unwrap().len() == 2);
}

fn results(ets: &[f64], mu: f64, tmu: f64) -> Vec<TaskResult> {
    ets.iter()
        .enumerate()
        .map(|(i, &et)| TaskResult {
            task_id: format!("task{i}"),
            status: ExecStatus::Passed,
            metrics: Some(EfficiencyMetrics { et_s: et, mu_mb: mu, tmu_mbs: tmu }),
            canonical: Some(EfficiencyMetrics { et_s: 0.5, mu_mb: 30.0, tmu_mbs: 10.0 }),
        })
        .collect()
}

#[test]
fn evaluate_results_files_renders_reduction_cells() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("base.jsonl");
    let c = dir.path().join("cand.jsonl");
    format::write_file(&b, ArtifactKind::Results, &results(&[0.30, 0.32], 31.66, 11.00)).unwrap();
    format::write_file(&c, ArtifactKind::Results, &results(&[0.15, 0.17], 31.67, 8.28)).unwrap();
    for fmt in ["text", "table"] {
        let out = ok(&["evaluate", "--baseline", s(&b), "--candidate", s(&c), "--format", fmt]);
        assert!(out.contains("0.16 (48.4%)"), "{out}");
        assert!(out.contains("31.67 (-0.0%)"), "{out}");
        assert!(out.contains("8.28 (24.7%)"), "{out}");
    }
    let csv = ok(&["evaluate", "--baseline", s(&b), "--candidate", s(&c), "--format", "csv"]);
    assert!(csv.starts_with("label,ET,NET,MU,NMU,TMU,NTMU,Overlap,Pass@1,ET_red_pct,NET_red_pct,MU_red_pct,NMU_red_pct,TMU_red_pct,NTMU_red_pct"));
    let rows = effiset_core::report::parse_csv(&csv).unwrap();
    assert_eq!(rows[1].reductions.unwrap().et, 48.4);

    let single = ok(&["report", "--in", s(&c), "--label", "tuned"]);
    assert!(single.contains("tuned") && single.contains("0.16"));
}

#[test]
fn evaluate_profiles_candidate_files() {
    let dir = tempfile::tempdir().unwrap();
    let tasks: Vec<Task> = desk_tasks(dir.path()).into_iter().filter(|t| t.id == "has_duplicate").collect();
    let tp = dir.path().join("tasks.jsonl");
    format::write_file(&tp, ArtifactKind::Tasks, &tasks).unwrap();
    let fast = std::fs::read_to_string(desk().join("replay/has_duplicate/desk-model/1.txt")).unwrap();
    let fast = effiset_core::provider::extract_code_block(&fast, Language::Python).unwrap();
    let bp = dir.path().join("base.jsonl");
    let cp = dir.path().join("cand.jsonl");
    format::write_file(&bp, ArtifactKind::Candidates, &[candidate("has_duplicate", 0, &tasks[0].initial_solution)]).unwrap();
    format::write_file(&cp, ArtifactKind::Candidates, &[candidate("has_duplicate", 0, &fast)]).unwrap();
    let out_dir = dir.path().join("results");
    let csv = ok(&[
        "evaluate", "--tasks", s(&tp), "--baseline", s(&bp), "--candidate", s(&cp), "--format", "csv", "--repeats", "1",
        "--out-dir", s(&out_dir),
    ]);
    let rows = effiset_core::report::parse_csv(&csv).unwrap();
    assert!(rows[1].reductions.unwrap().et > 50.0, "{csv}");
    assert_eq!(rows[1].pass1_pct, 100.0);
    assert_eq!(format::peek_kind(&out_dir.join("candidate.results.jsonl")).unwrap(), ArtifactKind::Results);
}

#[test]
fn input_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = effiset(&["ingest", "--in", "/nonexistent/source.jsonl", "--out", s(&dir.path().join("t.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "input");

    let tasks = dir.path().join("tasks.jsonl");
    format::write_file::<Task>(&tasks, ArtifactKind::Tasks, &[]).unwrap();
    let out = effiset(&["emit", "--in", s(&tasks), "--out", s(&dir.path().join("d.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("tasks"));

    let bad = dir.path().join("future.jsonl");
    std::fs::write(&bad, "{\"artifact\":\"effiset\",\"kind\":\"tasks\",\"version\":\"2.0\"}\n").unwrap();
    let out = effiset(&["profile", "--in", s(&bad), "--out", s(&dir.path().join("p.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[profile]\nrepeats = 0\n").unwrap();
    let out = effiset(&["--config", s(&cfg), "calibrate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_toolchain_exits_3_with_probe() {
    let probe = effiset_core::exec::probe(Language::Go);
    if probe.available {
        eprintln!("go is installed; nothing to check");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let task = Task {
        id: "g".into(),
        language: Language::Go,
        source_dataset: "s".into(),
        instruction: "Return one.".into(),
        initial_solution: "func One() int {\n\treturn 1\n}\n".into(),
        tests: vec![],
        metadata: BTreeMap::new(),
    };
    let tp = dir.path().join("tasks.jsonl");
    format::write_file(&tp, ArtifactKind::Tasks, &[task]).unwrap();
    let out = effiset(&["profile", "--in", s(&tp), "--out", s(&dir.path().join("p.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"], "environment");
    assert!(err["message"].as_str().unwrap().contains("go"), "{err}");
}

#[test]
fn provider_failures_exit_4_without_leaking_keys() {
    const KEY: &str = "sk-planted-cli-0000aaaa";
    let dir = tempfile::tempdir().unwrap();
    desk_tasks(dir.path());
    let tasks = dir.path().join("desk_tasks.jsonl");

    let cfg = dir.path().join("replay.toml");
    std::fs::write(
        &cfg,
        format!("[providers.empty]\nkind = \"replay\"\nlabel = \"m\"\nreplay_root = \"{}\"\n", s(dir.path())),
    )
    .unwrap();
    let out = effiset(&["--config", s(&cfg), "generate", "--in", s(&tasks), "--out", s(&dir.path().join("c.jsonl")), "--provider", "empty"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "provider");

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let cfg = dir.path().join("http.toml");
    std::fs::write(
        &cfg,
        format!(
            "[providers.remote]\nkind = \"http_chat\"\nlabel = \"remote\"\nendpoint = \"{dead}\"\nmodel_name = \"m\"\n\
             api_key_env = \"EFFISET_PLANTED_KEY\"\nmax_retries = 0\nrate_limit_rpm = 100000.0\n"
        ),
    )
    .unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_effiset"))
        .args(["--config", s(&cfg), "generate", "--in", s(&tasks), "--out", s(&dir.path().join("c.jsonl")), "--provider", "remote"])
        .env("EFFISET_PLANTED_KEY", KEY)
        .env("RUST_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let all = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    assert!(!all.contains(KEY), "key leaked in output");
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap_or_default();
        assert!(!text.contains(KEY));
    }
}

#[test]
fn augment_synthesizes_tests_from_replay() {
    let dir = tempfile::tempdir().unwrap();
    let task = Task {
        id: "add".into(),
        language: Language::Python,
        source_dataset: "s".into(),
        instruction: "Add two numbers.".into(),
        initial_solution: "def add(a, b):\n    s = a + b\n    return s\n".into(),
        tests: vec![],
        metadata: BTreeMap::new(),
    };
    let tp = dir.path().join("tasks.jsonl");
    format::write_file(&tp, ArtifactKind::Tasks, &[task]).unwrap();
    let root = dir.path().join("synth");
    std::fs::create_dir_all(root.join("add/tester")).unwrap();
    std::fs::write(
        root.join("add/tester/0.txt"),
        "```python\nassert add(1, 2) == 3\nassert add(2, 2) == 5\nassert add(-1, 1) == 0\n```\n",
    )
    .unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("[providers.synth]\nkind = \"replay\"\nlabel = \"tester\"\nreplay_root = \"{}\"\n", s(&root))).unwrap();
    let out = dir.path().join("augmented.jsonl");
    let report = ok(&["--config", s(&cfg), "augment-tests", "--in", s(&tp), "--out", s(&out), "--provider", "synth"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["tests_synthesized"], 3);
    assert_eq!(report["tests_dropped"]["assertion_failure"], 1);
    let tasks: Vec<Task> = format::read_file(&out, ArtifactKind::Tasks).unwrap();
    let bodies: Vec<&str> = tasks[0].tests.iter().map(|t| t.body.as_str()).collect();
    assert_eq!(bodies, ["assert add(1, 2) == 3", "assert add(-1, 1) == 0"]);
}

#[test]
fn calibrate_reports_host_statistics() {
    let out = ok(&["calibrate", "--runs", "2"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["runs"], 2);
    assert!(v["environment_label"].as_str().unwrap().starts_with("linux"));
    assert_eq!(v["sleep_et_s"].as_array().unwrap().len(), 2);
}

#[test]
fn full_pipeline_on_desk_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let paths = run_desk_pipeline(dir.path(), 1);
    let (header, records) = read_artifact(paths.last().unwrap());
    assert_eq!(header["kind"], "dataset");
    assert!(records.len() >= 9, "only {} records", records.len());
    let table = ok(&["report", "--in", s(paths.last().unwrap()), "--format", "table"]);
    assert!(table.contains("| Dataset | Python | C++ | Java | Rust | Go | Total |"), "{table}");
    assert!(table.contains("Initial mean"));
    for p in &paths {
        let (h, _) = read_artifact(p);
        assert_eq!(h["artifact"], "effiset");
        assert_eq!(h["version"], "1.0");
    }
}

#[test]
fn example_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../effiset.example.toml");
    let cfg = effiset_core::pipeline::Config::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.generation.n_per_provider, 4);
    assert_eq!(cfg.providers["openai"].temperature, 0.2);
    assert!(cfg.provider("recorded").is_ok());
}
