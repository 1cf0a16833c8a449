//! Sandboxed execution and resource profiling of solutions.
//!
//! A solution and its tests are materialized into a throwaway directory,
//! compiled when the language needs it, and then run as a single supervised
//! process group. While the program runs, resident memory of the whole
//! process tree is sampled at a fixed interval. The run is killed at the wall
//! timeout or when resident memory exceeds the cap.
//!
//! Memory is reported in MB of 2^20 bytes. The interpreter or runtime
//! baseline is included in every measurement; [`ExecutionService::baseline_mb`]
//! measures it separately.
//!
//! Network access of profiled processes is not restricted here; run the tool
//! inside a network-less container when that matters.

mod driver;
mod gate;
mod procfs;
mod toolchain;

pub use driver::{assertion_failed, PY_ASSERT_MARKER};
pub use gate::AdmissionGate;
pub use toolchain::{probe, required_tools, ToolchainStatus};

use crate::language::Language;
use crate::task::TestCase;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

const TAIL_BYTES: u64 = 4096;
const BUILD_TIMEOUT: Duration = Duration::from_secs(300);
/// Extra time granted after a kill for the process to be reaped.
const KILL_GRACE: Duration = Duration::from_secs(1);

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    /// The host cannot run this language or launch the program at all.
    #[error("environment error: {0}")]
    Environment(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("workdir i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceLimits {
    pub wall_timeout_s: f64,
    pub memory_cap_mb: f64,
    pub mem_sample_interval_ms: f64,
    #[serde(default)]
    pub cpu_affinity: Option<Vec<usize>>,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        ResourceLimits {
            wall_timeout_s: 30.0,
            memory_cap_mb: 4096.0,
            mem_sample_interval_ms: 10.0,
            cpu_affinity: None,
        }
    }
}

impl ResourceLimits {
    pub fn validate(&self) -> Result<(), ExecError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.wall_timeout_s) {
            return Err(ExecError::InvalidLimits("wall_timeout must be > 0".into()));
        }
        if !positive(self.memory_cap_mb) {
            return Err(ExecError::InvalidLimits("memory_cap must be > 0".into()));
        }
        if !positive(self.mem_sample_interval_ms) {
            return Err(ExecError::InvalidLimits("mem_sample_interval must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.wall_timeout_s = seconds;
        self
    }
}

/// Resident memory at `t` seconds after launch. Serialized as `[t, rss]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct MemorySample {
    pub t: f64,
    pub rss: f64,
}

impl From<(f64, f64)> for MemorySample {
    fn from((t, rss): (f64, f64)) -> Self {
        MemorySample { t, rss }
    }
}

impl From<MemorySample> for (f64, f64) {
    fn from(s: MemorySample) -> Self {
        (s.t, s.rss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Passed,
    FailedAssertion,
    RuntimeError,
    CompileError,
    Timeout,
    MemoryExceeded,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Passed => "passed",
            ExecStatus::FailedAssertion => "failed_assertion",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::CompileError => "compile_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::MemoryExceeded => "memory_exceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionProfile {
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    /// Launch to exit, compilation excluded.
    pub wall_time_s: f64,
    pub samples: Vec<MemorySample>,
    pub peak_mb: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub environment_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Code(i32),
    Signal(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillReason {
    Timeout,
    Memory,
}

/// Maps how a run ended onto exactly one status.
pub fn classify(language: Language, exit: ExitKind, stderr: &str, killed: Option<KillReason>) -> ExecStatus {
    match killed {
        Some(KillReason::Timeout) => return ExecStatus::Timeout,
        Some(KillReason::Memory) => return ExecStatus::MemoryExceeded,
        None => {}
    }
    if driver::assertion_failed(language, stderr) {
        return ExecStatus::FailedAssertion;
    }
    match exit {
        ExitKind::Code(0) => ExecStatus::Passed,
        _ => ExecStatus::RuntimeError,
    }
}

/// A program ready to run, or the compile failure that prevents running it.
#[derive(Debug)]
pub struct RunnablePlan {
    pub language: Language,
    workdir: tempfile::TempDir,
    run: Vec<String>,
    compile_failure: Option<String>,
    pub build_time_s: f64,
    runs: AtomicUsize,
}

impl RunnablePlan {
    pub fn workdir(&self) -> &Path {
        self.workdir.path()
    }

    pub fn compile_failed(&self) -> bool {
        self.compile_failure.is_some()
    }

    pub fn compile_diagnostics(&self) -> Option<&str> {
        self.compile_failure.as_deref()
    }
}

/// Shared execution front end: toolchain probes, workdirs and the admission gate.
#[derive(Debug)]
pub struct ExecutionService {
    gate: Arc<AdmissionGate>,
    work_root: Option<PathBuf>,
    environment_label: String,
    toolchains: Mutex<HashMap<Language, ToolchainStatus>>,
    baselines: Mutex<HashMap<Language, f64>>,
}

impl ExecutionService {
    pub fn new(gate: Arc<AdmissionGate>) -> Self {
        ExecutionService {
            gate,
            work_root: None,
            environment_label: host_environment_label(),
            toolchains: Mutex::new(HashMap::new()),
            baselines: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_work_root(mut self, root: PathBuf) -> Self {
        self.work_root = Some(root);
        self
    }

    pub fn with_environment_label(mut self, label: impl Into<String>) -> Self {
        self.environment_label = label.into();
        self
    }

    pub fn environment_label(&self) -> &str {
        &self.environment_label
    }

    pub fn gate(&self) -> &Arc<AdmissionGate> {
        &self.gate
    }

    pub fn toolchain(&self, language: Language) -> ToolchainStatus {
        self.toolchains
            .lock()
            .unwrap()
            .entry(language)
            .or_insert_with(|| toolchain::probe(language))
            .clone()
    }

    pub fn require_toolchain(&self, language: Language) -> Result<(), ExecError> {
        let st = self.toolchain(language);
        if st.available {
            Ok(())
        } else {
            Err(ExecError::Environment(format!(
                "toolchain for {language} unavailable: {}",
                st.detail.join("; ")
            )))
        }
    }

    /// Writes the program for `source` + `tests` and compiles it if needed.
    pub fn prepare(&self, language: Language, source: &str, tests: &[TestCase]) -> Result<RunnablePlan, ExecError> {
        self.require_toolchain(language)?;
        let mut builder = tempfile::Builder::new();
        builder.prefix("effiset-run-");
        let workdir = match &self.work_root {
            Some(root) => {
                std::fs::create_dir_all(root)?;
                builder.tempdir_in(root)?
            }
            None => builder.tempdir()?,
        };
        let layout = driver::materialize(language, source, tests, workdir.path())?;
        let mut compile_failure = None;
        let mut build_time = 0.0;
        for step in &layout.build {
            let out = driver::run_build(step, workdir.path(), BUILD_TIMEOUT)
                .map_err(|e| ExecError::Environment(format!("cannot launch {}: {e}", step[0])))?;
            build_time += out.duration.as_secs_f64();
            if !out.success {
                compile_failure = Some(tail_str(&out.diagnostics));
                break;
            }
        }
        Ok(RunnablePlan {
            language,
            workdir,
            run: layout.run,
            compile_failure,
            build_time_s: build_time,
            runs: AtomicUsize::new(0),
        })
    }

    /// Runs the plan once under `limits`, sampling memory until exit.
    pub fn run_once(&self, plan: &RunnablePlan, limits: &ResourceLimits) -> Result<ExecutionProfile, ExecError> {
        limits.validate()?;
        if let Some(diag) = &plan.compile_failure {
            return Ok(ExecutionProfile {
                status: ExecStatus::CompileError,
                exit_code: None,
                wall_time_s: 0.0,
                samples: Vec::new(),
                peak_mb: 0.0,
                stdout_tail: String::new(),
                stderr_tail: diag.clone(),
                environment_label: self.environment_label.clone(),
            });
        }
        let _permit = self.gate.acquire();
        supervise(plan, limits, &self.environment_label)
    }

    /// Runs the plan `repeats` times back to back.
    pub fn measure(&self, plan: &RunnablePlan, limits: &ResourceLimits, repeats: usize) -> Result<Vec<ExecutionProfile>, ExecError> {
        if repeats == 0 {
            return Err(ExecError::InvalidLimits("repeats must be >= 1".into()));
        }
        (0..repeats).map(|_| self.run_once(plan, limits)).collect()
    }

    /// Peak memory of an empty program in `language`; cached per service.
    pub fn baseline_mb(&self, language: Language) -> Result<f64, ExecError> {
        if let Some(v) = self.baselines.lock().unwrap().get(&language) {
            return Ok(*v);
        }
        let plan = self.prepare(language, "", &[])?;
        let limits = ResourceLimits::default();
        let runs = self.measure(&plan, &limits, 3)?;
        let peaks: Vec<f64> = runs
            .iter()
            .filter(|p| p.status == ExecStatus::Passed)
            .map(|p| p.peak_mb)
            .collect();
        if peaks.is_empty() {
            return Err(ExecError::Environment(format!(
                "empty {language} program did not run: {}",
                runs[0].stderr_tail
            )));
        }
        let baseline = peaks.iter().copied().fold(f64::INFINITY, f64::min);
        self.baselines.lock().unwrap().insert(language, baseline);
        Ok(baseline)
    }
}

fn tail_str(s: &str) -> String {
    let max = TAIL_BYTES as usize;
    if s.len() <= max {
        return s.to_string();
    }
    let mut start = s.len() - max;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    s[start..].to_string()
}

fn tail_file(path: &Path) -> String {
    let Ok(mut f) = std::fs::File::open(path) else {
        return String::new();
    };
    let len = f.metadata().map(|m| m.len()).unwrap_or(0);
    if len > TAIL_BYTES {
        let _ = f.seek(SeekFrom::Start(len - TAIL_BYTES));
    }
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

struct Exit {
    at: Instant,
    kind: ExitKind,
    maxrss_kb: i64,
}

fn wait_for(pid: libc::pid_t) -> std::io::Result<(ExitKind, i64)> {
    let mut status: libc::c_int = 0;
    // SAFETY: rusage is plain data; wait4 fills it for our own child.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    loop {
        let rc = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
        if rc == pid {
            break;
        }
        let err = std::io::Error::last_os_error();
        if err.kind() != std::io::ErrorKind::Interrupted {
            return Err(err);
        }
    }
    let kind = if libc::WIFEXITED(status) {
        ExitKind::Code(libc::WEXITSTATUS(status))
    } else {
        ExitKind::Signal(libc::WTERMSIG(status))
    };
    Ok((kind, usage.ru_maxrss))
}

fn kill_group(pgid: u32) {
    // SAFETY: signalling a process group we created.
    unsafe {
        libc::killpg(pgid as libc::pid_t, libc::SIGKILL);
    }
}

fn supervise(plan: &RunnablePlan, limits: &ResourceLimits, env_label: &str) -> Result<ExecutionProfile, ExecError> {
    use std::os::unix::process::CommandExt;

    let run_no = plan.runs.fetch_add(1, Ordering::Relaxed);
    let dir = plan.workdir();
    let out_path = dir.join(format!("stdout-{run_no}.txt"));
    let err_path = dir.join(format!("stderr-{run_no}.txt"));
    let mut cmd = Command::new(&plan.run[0]);
    cmd.args(&plan.run[1..])
        .current_dir(dir)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", dir)
        .env("LANG", "C.UTF-8")
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::null())
        .stdout(std::fs::File::create(&out_path)?)
        .stderr(std::fs::File::create(&err_path)?)
        .process_group(0);
    if let Some(cores) = limits.cpu_affinity.clone().filter(|c| !c.is_empty()) {
        // SAFETY: cpu_set_t is plain data; sched_setaffinity is async-signal-safe.
        let mut set: libc::cpu_set_t = unsafe { std::mem::zeroed() };
        for c in cores {
            unsafe { libc::CPU_SET(c, &mut set) };
        }
        unsafe {
            cmd.pre_exec(move || {
                if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }

    let page = procfs::page_size();
    let interval = Duration::from_secs_f64(limits.mem_sample_interval_ms / 1000.0);
    let timeout = Duration::from_secs_f64(limits.wall_timeout_s);

    let start = Instant::now();
    let child = cmd
        .spawn()
        .map_err(|e| ExecError::Environment(format!("cannot launch {}: {e}", plan.run[0])))?;
    let pid = child.id();
    // The waiter owns reaping; the sampler below is the only writer of `samples`.
    let (tx, rx) = mpsc::channel::<std::io::Result<Exit>>();
    let waiter = std::thread::spawn(move || {
        let res = wait_for(pid as libc::pid_t).map(|(kind, maxrss_kb)| Exit {
            at: Instant::now(),
            kind,
            maxrss_kb,
        });
        let _ = tx.send(res);
    });
    drop(child);

    let mut samples: Vec<MemorySample> = Vec::new();
    let mut killed: Option<KillReason> = None;
    let mut next_tick = start;
    let exit = loop {
        let now = Instant::now();
        let t = now.duration_since(start).as_secs_f64();
        if killed.is_none() {
            if let Some(rss) = procfs::tree_rss_mb(pid, page) {
                if samples.last().is_none_or(|s| t > s.t) {
                    samples.push(MemorySample { t, rss });
                }
                if rss > limits.memory_cap_mb {
                    killed = Some(KillReason::Memory);
                    kill_group(pid);
                }
            }
            if killed.is_none() && now.duration_since(start) >= timeout {
                killed = Some(KillReason::Timeout);
                kill_group(pid);
            }
        }
        next_tick += interval;
        let wait = if killed.is_some() {
            KILL_GRACE
        } else {
            next_tick
                .saturating_duration_since(Instant::now())
                .min(timeout.saturating_sub(start.elapsed()) + Duration::from_millis(1))
        };
        match rx.recv_timeout(wait) {
            Ok(res) => break res?,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if killed.is_some() {
                    // Still not reaped after SIGKILL; keep signalling.
                    kill_group(pid);
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(ExecError::Environment("waiter thread vanished".into()));
            }
        }
    };
    let _ = waiter.join();
    // Anything the program left behind in its group goes too.
    kill_group(pid);

    let wall_time_s = exit.at.duration_since(start).as_secs_f64();
    samples.retain(|s| s.t <= wall_time_s);
    let sampled_peak = samples.iter().map(|s| s.rss).fold(0.0, f64::max);
    let peak_mb = sampled_peak.max(procfs::kb_to_mb(exit.maxrss_kb));
    let stderr_tail = tail_file(&err_path);
    let status = classify(plan.language, exit.kind, &stderr_tail, killed);
    Ok(ExecutionProfile {
        status,
        exit_code: match exit.kind {
            ExitKind::Code(c) => Some(c),
            ExitKind::Signal(_) => None,
        },
        wall_time_s,
        samples,
        peak_mb,
        stdout_tail: tail_file(&out_path),
        stderr_tail,
        environment_label: env_label.to_string(),
    })
}

/// Host fingerprint: OS, architecture, CPU model and core count.
pub fn host_environment_label() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.split_whitespace().collect::<Vec<_>>().join(" "))
        })
        .unwrap_or_else(|| "unknown-cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}/{cpu}/cores={cores}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Programs with known behavior used to check the profiler on a host.
pub mod calibration {
    pub const SLEEP_SECONDS: f64 = 0.5;
    pub const HOLD_MB: f64 = 100.0;

    pub fn sleep_program() -> String {
        format!("import time\ntime.sleep({SLEEP_SECONDS})\n")
    }

    /// Allocates and touches HOLD_MB, then holds it long enough to be sampled.
    pub fn hold_program() -> String {
        format!(
            "import time\nblock = b'\\x01' * ({} * 1024 * 1024)\ntime.sleep(0.3)\n",
            HOLD_MB as u64
        )
    }

    pub fn spin_program(seconds: f64) -> String {
        format!("import time\nend = time.monotonic() + {seconds}\nwhile time.monotonic() < end:\n    pass\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_is_total_and_prioritizes_kills() {
        use ExecStatus::*;
        let py = Language::Python;
        assert_eq!(classify(py, ExitKind::Code(0), "", None), Passed);
        assert_eq!(classify(py, ExitKind::Code(1), "Traceback", None), RuntimeError);
        assert_eq!(classify(py, ExitKind::Code(86), PY_ASSERT_MARKER, None), FailedAssertion);
        assert_eq!(classify(py, ExitKind::Code(0), PY_ASSERT_MARKER, None), FailedAssertion);
        assert_eq!(classify(py, ExitKind::Signal(9), "", Some(KillReason::Timeout)), Timeout);
        assert_eq!(classify(py, ExitKind::Code(0), "", Some(KillReason::Memory)), MemoryExceeded);
        assert_eq!(classify(Language::Cpp, ExitKind::Signal(6), "Assertion `x' failed.", None), FailedAssertion);
        assert_eq!(classify(Language::Cpp, ExitKind::Signal(11), "", None), RuntimeError);
    }

    #[test]
    fn limits_validation() {
        assert!(ResourceLimits::default().validate().is_ok());
        assert!(ResourceLimits::default().with_timeout(0.0).validate().is_err());
        let l = ResourceLimits { mem_sample_interval_ms: -1.0, ..ResourceLimits::default() };
        assert!(l.validate().is_err());
    }

    #[test]
    fn samples_serialize_as_pairs() {
        let s = MemorySample { t: 0.5, rss: 12.25 };
        assert_eq!(serde_json::to_string(&s).unwrap(), "[0.5,12.25]");
        let back: MemorySample = serde_json::from_str("[1.0,2.0]").unwrap();
        assert_eq!(back, MemorySample { t: 1.0, rss: 2.0 });
    }

    #[test]
    fn tail_keeps_last_bytes_on_char_boundary() {
        let s = format!("{}é{}", "a".repeat(10), "b".repeat(TAIL_BYTES as usize - 1));
        let t = tail_str(&s);
        assert!(t.len() <= TAIL_BYTES as usize);
        assert!(t.ends_with('b'));
    }
}
