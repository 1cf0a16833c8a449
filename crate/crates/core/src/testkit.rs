//! Test synthesis and validation against the initial solution.
//!
//! A test is valid when it passes the task's initial solution on its own.
//! Validation runs every test in a separate process; profiling later runs the
//! whole suite at once.

use crate::exec::{ExecError, ExecStatus, ExecutionService, ResourceLimits};
use crate::language::Language;
use crate::provider::{fenced_blocks, CompletionBackend, PromptTemplate, ProviderError};
use crate::syntax;
use crate::task::{Task, TestCase, TestOrigin};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, thiserror::Error)]
pub enum TestkitError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("initial solution of task {task_id} does not compile: {diagnostics}")]
    InitialSolutionBroken { task_id: String, diagnostics: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestDropReason {
    AssertionFailure,
    RuntimeError,
    Timeout,
    CompileError,
}

impl TestDropReason {
    fn from_status(status: ExecStatus) -> Option<Self> {
        match status {
            ExecStatus::Passed => None,
            ExecStatus::FailedAssertion => Some(TestDropReason::AssertionFailure),
            ExecStatus::RuntimeError | ExecStatus::MemoryExceeded => Some(TestDropReason::RuntimeError),
            ExecStatus::Timeout => Some(TestDropReason::Timeout),
            ExecStatus::CompileError => Some(TestDropReason::CompileError),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestkitConfig {
    pub tests_per_task: usize,
    pub min_tests: usize,
    pub validation_timeout_s: f64,
    /// Run each test twice and drop it if the outcomes differ.
    pub check_determinism: bool,
}

impl Default for TestkitConfig {
    fn default() -> Self {
        TestkitConfig {
            tests_per_task: 10,
            min_tests: 1,
            validation_timeout_s: 10.0,
            check_determinism: false,
        }
    }
}

fn block_matches(info: &str, language: Language) -> bool {
    let tag = info.split_whitespace().next().unwrap_or("");
    tag.is_empty() || tag.parse::<Language>().map_or(true, |l| l == language)
}

/// Python blocks made only of single-line asserts are split into one test per assert.
fn split_block(language: Language, code: &str) -> Vec<String> {
    let lines: Vec<&str> = code
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect();
    let all_asserts = language == Language::Python
        && lines.len() > 1
        && lines.iter().all(|l| l.starts_with("assert ") && syntax::check_lexes(language, l).is_ok());
    if all_asserts {
        lines.into_iter().map(str::to_string).collect()
    } else {
        vec![code.trim_end().to_string()]
    }
}

/// Pulls test bodies out of a model response.
pub fn extract_tests(task: &Task, response: &str, n: usize, start_index: usize) -> Vec<TestCase> {
    let entry = task.entry_point();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for block in fenced_blocks(response) {
        if !block_matches(&block.info, task.language) {
            continue;
        }
        for body in split_block(task.language, &block.code) {
            if body.trim().is_empty() {
                continue;
            }
            if let Some(ep) = &entry {
                if !body.contains(ep.as_str()) {
                    continue;
                }
                // A block that redefines the entry point is a solution, not a test.
                if syntax::detect_entry_point(task.language, &body).as_deref() == Some(ep) {
                    continue;
                }
            }
            if !seen.insert(body.clone()) {
                continue;
            }
            if out.len() == n {
                return out;
            }
            out.push(TestCase {
                id: format!("{}-s{}", task.id, start_index + out.len()),
                body,
                origin: TestOrigin::Synthesized,
            });
        }
    }
    out
}

/// Asks `provider` for up to `n` new tests for `task`.
pub fn synthesize_tests(
    task: &Task,
    provider: &dyn CompletionBackend,
    n: usize,
    template: &PromptTemplate,
) -> Result<Vec<TestCase>, TestkitError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let prompt = template.render(task);
    let responses = provider.complete(&task.id, &prompt, 1)?;
    let mut tests: Vec<TestCase> = Vec::new();
    for resp in responses {
        let more = extract_tests(task, &resp.text, n - tests.len(), tests.len());
        for t in more {
            if !tests.iter().any(|x| x.body == t.body) {
                tests.push(t);
            }
        }
    }
    Ok(tests)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationOutcome {
    pub kept: Vec<TestCase>,
    pub dropped: Vec<(String, TestDropReason)>,
}

/// Runs each test alone against the initial solution and keeps the passing ones.
pub fn validate_tests(
    task: &Task,
    tests: &[TestCase],
    exec: &ExecutionService,
    config: &TestkitConfig,
) -> Result<ValidationOutcome, TestkitError> {
    let bare = exec.prepare(task.language, &task.initial_solution, &[])?;
    if let Some(diag) = bare.compile_diagnostics() {
        return Err(TestkitError::InitialSolutionBroken {
            task_id: task.id.clone(),
            diagnostics: diag.to_string(),
        });
    }
    drop(bare);
    let limits = ResourceLimits::default().with_timeout(config.validation_timeout_s);
    let runs = if config.check_determinism { 2 } else { 1 };
    let mut out = ValidationOutcome::default();
    for test in tests {
        let plan = exec.prepare(task.language, &task.initial_solution, std::slice::from_ref(test))?;
        let statuses = exec
            .measure(&plan, &limits, runs)?
            .into_iter()
            .map(|p| p.status)
            .collect::<Vec<_>>();
        let verdict = if statuses.windows(2).any(|w| w[0] != w[1]) {
            Some(TestDropReason::RuntimeError)
        } else {
            TestDropReason::from_status(statuses[0])
        };
        match verdict {
            None => out.kept.push(test.clone()),
            Some(reason) => out.dropped.push((test.id.clone(), reason)),
        }
    }
    Ok(out)
}

/// Keeps tasks with at least `min_tests` valid tests, replacing their tests with the kept set.
pub fn drop_untestable(tasks_with_tests: Vec<(Task, Vec<TestCase>)>, min_tests: usize) -> (Vec<Task>, usize) {
    let mut removed = 0;
    let mut kept = Vec::new();
    for (mut task, tests) in tasks_with_tests {
        if tests.len() >= min_tests.max(1) {
            task.tests = tests;
            kept.push(task);
        } else {
            removed += 1;
        }
    }
    (kept, removed)
}
