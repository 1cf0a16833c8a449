//! Per-language program layout.
//!
//! Every driver materializes one program that runs the solution followed by
//! all of its tests in a single process and exits 0 iff every test passes.
//! Solutions are completions in function style and must not define their own
//! entry point (`main`).
//!
//! | language | files                                 | test body convention                       |
//! |----------|---------------------------------------|--------------------------------------------|
//! | python   | solution.py, tests.json, driver.py    | statements, `assert ...`                   |
//! | cpp      | main.cpp                              | statements inside `main`, `assert(...)`    |
//! | rust     | main.rs                               | statements inside `main`, `assert!(...)`   |
//! | java     | <Class>.java, Main.java               | statements inside `main`, `assert ...;`    |
//! | go       | main.go                               | statements inside `main`, `effisetAssert(...)` |

use crate::language::Language;
use crate::task::TestCase;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

pub const PY_ASSERT_MARKER: &str = "@@EFFISET_ASSERTION_FAILED@@";
pub const GO_ASSERT_MARKER: &str = "effiset: assertion failed";

const PY_DRIVER: &str = r#"import json, sys, traceback
with open("tests.json") as _f:
    _tests = json.load(_f)
with open("solution.py") as _f:
    _src = _f.read()
_ns = {"__name__": "solution", "__builtins__": __builtins__}
exec(compile(_src, "solution.py", "exec"), _ns)
for _i, _body in enumerate(_tests):
    try:
        exec(compile(_body, "test_%d" % _i, "exec"), _ns)
    except AssertionError:
        traceback.print_exc()
        sys.stderr.write("\n@@EFFISET_ASSERTION_FAILED@@ test %d\n" % _i)
        sys.stderr.flush()
        sys.exit(86)
"#;

const PY_SYNTAX_CHECK: &str = r#"import ast, json, sys
ast.parse(open("solution.py").read(), "solution.py")
for i, body in enumerate(json.load(open("tests.json"))):
    ast.parse(body, "test_%d" % i)
"#;

/// Files written and the commands needed to build and run them.
#[derive(Debug, Clone)]
pub struct Layout {
    pub build: Vec<Vec<String>>,
    pub run: Vec<String>,
}

fn indent(body: &str) -> String {
    body.lines()
        .map(|l| format!("        {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn main_body(tests: &[TestCase]) -> String {
    tests
        .iter()
        .map(|t| format!("    {{\n{}\n    }}\n", indent(&t.body)))
        .collect()
}

fn strs(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Name of the first `public class` in a Java solution.
fn java_public_class(src: &str) -> Option<String> {
    src.lines().find_map(|l| {
        let rest = l.trim_start().strip_prefix("public ")?;
        let rest = rest
            .trim_start()
            .strip_prefix("final ")
            .unwrap_or(rest)
            .trim_start();
        let rest = rest.strip_prefix("class ")?;
        let name: String = rest
            .trim_start()
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect();
        (!name.is_empty()).then_some(name)
    })
}

pub fn materialize(
    language: Language,
    source: &str,
    tests: &[TestCase],
    dir: &Path,
) -> std::io::Result<Layout> {
    let write = |name: &str, content: &str| std::fs::write(dir.join(name), content);
    Ok(match language {
        Language::Python => {
            let bodies: Vec<&str> = tests.iter().map(|t| t.body.as_str()).collect();
            write("solution.py", source)?;
            write("tests.json", &serde_json::to_string(&bodies).map_err(std::io::Error::other)?)?;
            write("driver.py", PY_DRIVER)?;
            write("syntax_check.py", PY_SYNTAX_CHECK)?;
            Layout {
                build: vec![strs(&["python3", "-I", "-B", "syntax_check.py"])],
                run: strs(&["python3", "-I", "-B", "driver.py"]),
            }
        }
        Language::Cpp => {
            let program = format!(
                "#undef NDEBUG\n#include <bits/stdc++.h>\nusing namespace std;\n\n{source}\n\nint main() {{\n{}    return 0;\n}}\n",
                main_body(tests)
            );
            write("main.cpp", &program)?;
            Layout {
                build: vec![strs(&["g++", "-O2", "-std=c++17", "-o", "prog", "main.cpp"])],
                run: strs(&["./prog"]),
            }
        }
        Language::Rust => {
            let program = format!(
                "#![allow(unused, dead_code, non_snake_case)]\n\n{source}\n\nfn main() {{\n{}}}\n",
                main_body(tests)
            );
            write("main.rs", &program)?;
            Layout {
                build: vec![strs(&[
                    "rustc", "-O", "--edition", "2021", "-o", "prog", "main.rs",
                ])],
                run: strs(&["./prog"]),
            }
        }
        Language::Java => {
            let mut sources = vec!["Main.java".to_string()];
            if !source.trim().is_empty() {
                let file = format!(
                    "{}.java",
                    java_public_class(source).unwrap_or_else(|| "Solution".into())
                );
                write(&file, source)?;
                sources.push(file);
            }
            let driver = format!(
                "import java.util.*;\n\npublic class Main {{\n    public static void main(String[] args) throws Exception {{\n{}    }}\n}}\n",
                indent(&main_body(tests))
            );
            write("Main.java", &driver)?;
            let mut javac = strs(&["javac", "-d", "build"]);
            javac.extend(sources);
            Layout {
                build: vec![javac],
                run: strs(&["java", "-ea", "-cp", "build", "Main"]),
            }
        }
        Language::Go => {
            let body: String = source
                .lines()
                .filter(|l| !l.trim_start().starts_with("package "))
                .collect::<Vec<_>>()
                .join("\n");
            let program = format!(
                "package main\n\n{body}\n\nfunc effisetAssert(cond bool) {{\n    if !cond {{\n        panic(\"{GO_ASSERT_MARKER}\")\n    }}\n}}\n\nfunc main() {{\n{}}}\n",
                main_body(tests)
            );
            write("main.go", &program)?;
            Layout {
                build: vec![strs(&["go", "build", "-o", "prog", "main.go"])],
                run: strs(&["./prog"]),
            }
        }
    })
}

/// Whether stderr shows a failed test assertion for `language`.
pub fn assertion_failed(language: Language, stderr: &str) -> bool {
    match language {
        Language::Python => stderr.contains(PY_ASSERT_MARKER),
        Language::Cpp => {
            (stderr.contains("Assertion `") && stderr.contains("failed"))
                || stderr.contains("Assertion failed")
        }
        Language::Rust => stderr.contains("assertion") && stderr.contains("failed"),
        Language::Java => stderr.contains("java.lang.AssertionError"),
        Language::Go => stderr.contains(GO_ASSERT_MARKER),
    }
}

#[derive(Debug)]
pub struct BuildOutput {
    pub success: bool,
    pub diagnostics: String,
    pub duration: Duration,
}

/// Runs one build command with a hard timeout; the whole process group is killed on expiry.
pub fn run_build(argv: &[String], dir: &Path, timeout: Duration) -> std::io::Result<BuildOutput> {
    use std::os::unix::process::CommandExt;
    let log: PathBuf = dir.join("build.log");
    let file = std::fs::File::create(&log)?;
    let start = Instant::now();
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(file.try_clone()?)
        .stderr(file)
        .process_group(0)
        .spawn()?;
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break Some(st);
        }
        if start.elapsed() >= timeout {
            // SAFETY: signalling our own child's process group.
            unsafe { libc::killpg(child.id() as libc::pid_t, libc::SIGKILL) };
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let mut diagnostics = std::fs::read_to_string(&log).unwrap_or_default();
    if status.is_none() {
        diagnostics.push_str(&format!("\nbuild timed out after {timeout:?}"));
    }
    Ok(BuildOutput {
        success: status.is_some_and(|s| s.success()),
        diagnostics,
        duration: start.elapsed(),
    })
}
