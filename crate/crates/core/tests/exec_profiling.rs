use effiset_core::exec::{calibration, AdmissionGate, ExecStatus, ExecutionService, ResourceLimits};
use effiset_core::language::Language;
use effiset_core::task::{TestCase, TestOrigin};
use std::sync::Arc;
use std::time::{Duration, Instant};

fn service() -> ExecutionService {
    ExecutionService::new(Arc::new(AdmissionGate::per_core()))
}

fn test(body: &str) -> TestCase {
    TestCase {
        id: "t".into(),
        body: body.into(),
        origin: TestOrigin::SourceProvided,
    }
}

const ADD: &str = "def add(a, b):\n    return a + b\n";

fn pid_alive(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => !stat.rsplit_once(')').is_some_and(|(_, r)| r.trim_start().starts_with('Z')),
        Err(_) => false,
    }
}

#[test]
fn interpreted_plan_has_no_build_artifacts_and_passes() {
    let svc = service();
    let plan = svc
        .prepare(Language::Python, ADD, &[test("assert add(1, 2) == 3"), test("assert add(-1, 1) == 0")])
        .unwrap();
    assert!(!plan.compile_failed());
    let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
    assert_eq!(p.status, ExecStatus::Passed, "{}", p.stderr_tail);
    assert_eq!(p.exit_code, Some(0));
    assert!(!p.samples.is_empty());
    assert!(p.peak_mb >= p.samples.iter().map(|s| s.rss).fold(0.0, f64::max));
}

#[test]
fn python_status_classification() {
    let svc = service();
    let limits = ResourceLimits::default();
    let run = |tests: &[TestCase]| {
        let plan = svc.prepare(Language::Python, ADD, tests).unwrap();
        svc.run_once(&plan, &limits).unwrap()
    };
    assert_eq!(run(&[test("assert add(1, 2) == 4")]).status, ExecStatus::FailedAssertion);
    assert_eq!(run(&[test("assert undefined_fn(1) == 4")]).status, ExecStatus::RuntimeError);
    assert_eq!(run(&[test("assert add(1, 2) ==")]).status, ExecStatus::CompileError);
    let plan = svc.prepare(Language::Python, "def add(a, b)\n    return a\n", &[]).unwrap();
    assert!(plan.compile_failed());
    assert!(plan.compile_diagnostics().unwrap().contains("SyntaxError"));
}

#[test]
fn compiled_syntax_error_is_compile_error_with_diagnostics() {
    let svc = service();
    let plan = svc
        .prepare(Language::Cpp, "int add(int a, int b) { return a + b }", &[test("assert(add(1,2)==3);")])
        .unwrap();
    assert!(plan.compile_failed());
    let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
    assert_eq!(p.status, ExecStatus::CompileError);
    assert!(p.stderr_tail.contains("error"), "{}", p.stderr_tail);
    assert!(p.samples.is_empty());
}

#[test]
fn compile_time_is_excluded_from_wall_time() {
    let svc = service();
    // Heavy template instantiation keeps the compiler busy for a while.
    let heavy = r#"
template <int N> struct Fib { static constexpr long long v = Fib<N-1>::v + Fib<N-2>::v; };
template <> struct Fib<1> { static constexpr long long v = 1; };
template <> struct Fib<0> { static constexpr long long v = 0; };
long long fib90() { return Fib<90>::v; }
std::map<std::string, std::vector<std::set<int>>> big() { std::map<std::string, std::vector<std::set<int>>> m; m["a"].push_back({1,2,3}); return m; }
"#;
    let plan = svc
        .prepare(Language::Cpp, heavy, &[test("assert(fib90() == 2880067194370816120LL);"), test("assert(big().size() == 1);")])
        .unwrap();
    assert!(!plan.compile_failed(), "{:?}", plan.compile_diagnostics());
    assert!(plan.build_time_s >= 1.0, "build took {}", plan.build_time_s);
    let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
    assert_eq!(p.status, ExecStatus::Passed, "{}", p.stderr_tail);
    assert!(p.wall_time_s < 0.5, "wall {}", p.wall_time_s);
}

#[test]
fn cpp_and_rust_assertions_are_classified() {
    let svc = service();
    let limits = ResourceLimits::default();
    let plan = svc.prepare(Language::Cpp, "int sq(int x) { return x * x; }", &[test("assert(sq(3) == 9);"), test("assert(sq(2) == 5);")]).unwrap();
    assert_eq!(svc.run_once(&plan, &limits).unwrap().status, ExecStatus::FailedAssertion);
    let plan = svc.prepare(Language::Rust, "fn sq(x: i64) -> i64 { x * x }", &[test("assert_eq!(sq(3), 9);")]).unwrap();
    assert_eq!(svc.run_once(&plan, &limits).unwrap().status, ExecStatus::Passed);
    let plan = svc.prepare(Language::Rust, "fn sq(x: i64) -> i64 { x * x }", &[test("assert_eq!(sq(3), 10);")]).unwrap();
    assert_eq!(svc.run_once(&plan, &limits).unwrap().status, ExecStatus::FailedAssertion);
    let plan = svc.prepare(Language::Rust, "fn first(v: &[i32]) -> i32 { v[3] }", &[test("assert_eq!(first(&[1]), 1);")]).unwrap();
    assert_eq!(svc.run_once(&plan, &limits).unwrap().status, ExecStatus::RuntimeError);
}

#[test]
fn sleep_calibration_program_is_timed_tightly() {
    let svc = service();
    let plan = svc.prepare(Language::Python, &calibration::sleep_program(), &[]).unwrap();
    let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
    assert_eq!(p.status, ExecStatus::Passed);
    assert!((0.5..=0.6).contains(&p.wall_time_s), "wall {}", p.wall_time_s);
    let last = p.samples.last().unwrap();
    assert!(last.t <= p.wall_time_s);
    assert!(p.samples.windows(2).all(|w| w[0].t < w[1].t));
    // ~10 ms interval over 0.5 s
    assert!(p.samples.len() >= 20, "{} samples", p.samples.len());
}

#[test]
fn infinite_loop_hits_wall_timeout() {
    let svc = service();
    let plan = svc.prepare(Language::Python, "while True:\n    pass\n", &[]).unwrap();
    let p = svc.run_once(&plan, &ResourceLimits::default().with_timeout(1.0)).unwrap();
    assert_eq!(p.status, ExecStatus::Timeout);
    assert!(p.wall_time_s >= 1.0 && p.wall_time_s <= 2.0, "wall {}", p.wall_time_s);
}

#[test]
fn memory_hold_is_seen_above_baseline() {
    let svc = service();
    let baseline = svc.baseline_mb(Language::Python).unwrap();
    let plan = svc.prepare(Language::Python, &calibration::hold_program(), &[]).unwrap();
    let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
    assert_eq!(p.status, ExecStatus::Passed);
    let over = p.peak_mb - baseline;
    assert!((80.0..=140.0).contains(&over), "peak {} baseline {baseline}", p.peak_mb);
}

#[test]
fn memory_cap_kills_the_run() {
    let svc = service();
    let plan = svc
        .prepare(Language::Python, "import time\nx = b'\\x01' * (300 * 1024 * 1024)\ntime.sleep(5)\n", &[])
        .unwrap();
    let limits = ResourceLimits {
        memory_cap_mb: 150.0,
        ..ResourceLimits::default()
    };
    let started = Instant::now();
    let p = svc.run_once(&plan, &limits).unwrap();
    assert_eq!(p.status, ExecStatus::MemoryExceeded);
    assert!(started.elapsed() < Duration::from_secs(4));
}

#[test]
fn measure_repeats_without_caching() {
    let svc = service();
    let plan = svc.prepare(Language::Python, &calibration::spin_program(0.05), &[]).unwrap();
    let limits = ResourceLimits::default();
    assert_eq!(svc.measure(&plan, &limits, 1).unwrap().len(), 1);
    let runs = svc.measure(&plan, &limits, 5).unwrap();
    assert_eq!(runs.len(), 5);
    assert!(runs.iter().all(|r| r.status == ExecStatus::Passed));
    // distinct runs produce distinct measurements
    assert!(runs.windows(2).any(|w| w[0].wall_time_s != w[1].wall_time_s));
    assert!(svc.measure(&plan, &limits, 0).is_err());
}

#[test]
fn no_descendant_outlives_the_run() {
    let svc = service();
    let src = "import subprocess\np = subprocess.Popen(['sleep', '30'])\nopen('child.pid', 'w').write(str(p.pid))\n";
    let plan = svc.prepare(Language::Python, src, &[]).unwrap();
    let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
    assert_eq!(p.status, ExecStatus::Passed, "{}", p.stderr_tail);
    let pid: u32 = std::fs::read_to_string(plan.workdir().join("child.pid")).unwrap().parse().unwrap();
    let deadline = Instant::now() + Duration::from_secs(1);
    while pid_alive(pid) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(!pid_alive(pid), "grandchild {pid} survived");

    // Same on timeout.
    let src = "import subprocess, time\np = subprocess.Popen(['sleep', '30'])\nopen('child.pid', 'w').write(str(p.pid))\ntime.sleep(30)\n";
    let plan = svc.prepare(Language::Python, src, &[]).unwrap();
    let p = svc.run_once(&plan, &ResourceLimits::default().with_timeout(0.5)).unwrap();
    assert_eq!(p.status, ExecStatus::Timeout);
    let pid: u32 = std::fs::read_to_string(plan.workdir().join("child.pid")).unwrap().parse().unwrap();
    let deadline = Instant::now() + Duration::from_secs(1);
    while pid_alive(pid) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(!pid_alive(pid));
}

#[test]
fn concurrent_runs_do_not_share_workdirs() {
    let svc = Arc::new(service());
    let src = "import os, time\nassert not os.path.exists('marker')\nopen('marker', 'w').write('x')\ntime.sleep(0.1)\n";
    let handles: Vec<_> = (0..3)
        .map(|_| {
            let svc = svc.clone();
            std::thread::spawn(move || {
                let plan = svc.prepare(Language::Python, src, &[]).unwrap();
                let p = svc.run_once(&plan, &ResourceLimits::default()).unwrap();
                (plan.workdir().to_path_buf(), p.status)
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(results.iter().all(|(_, s)| *s == ExecStatus::Passed));
    let mut dirs: Vec<_> = results.iter().map(|(d, _)| d.clone()).collect();
    dirs.dedup();
    assert_eq!(dirs.len(), 3);
}

#[test]
fn missing_toolchain_is_an_environment_error() {
    let svc = service();
    for lang in [Language::Java, Language::Go] {
        if !svc.toolchain(lang).available {
            let err = svc.prepare(lang, "x", &[]).unwrap_err();
            assert!(matches!(err, effiset_core::exec::ExecError::Environment(_)));
            assert!(err.to_string().contains("unavailable"));
        }
    }
}
