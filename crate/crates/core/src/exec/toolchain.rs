use crate::language::Language;
use serde::Serialize;
use std::process::{Command, Stdio};

/// Result of probing the tools a language needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolchainStatus {
    pub language: Language,
    pub available: bool,
    /// First version line of each tool, or the probe failure.
    pub detail: Vec<String>,
}

/// Programs (with their version flag) required to build and run `language`.
pub fn required_tools(language: Language) -> &'static [(&'static str, &'static str)] {
    match language {
        Language::Python => &[("python3", "--version")],
        Language::Cpp => &[("g++", "--version")],
        Language::Rust => &[("rustc", "--version")],
        Language::Java => &[("javac", "-version"), ("java", "-version")],
        Language::Go => &[("go", "version")],
    }
}

pub fn probe(language: Language) -> ToolchainStatus {
    let mut available = true;
    let mut detail = Vec::new();
    for (tool, flag) in required_tools(language) {
        match Command::new(tool)
            .arg(flag)
            .stdin(Stdio::null())
            .output()
        {
            Ok(out) if out.status.success() => {
                let text = if out.stdout.is_empty() { out.stderr } else { out.stdout };
                let first = String::from_utf8_lossy(&text)
                    .lines()
                    .next()
                    .unwrap_or_default()
                    .trim()
                    .to_string();
                detail.push(format!("{tool}: {first}"));
            }
            Ok(out) => {
                available = false;
                detail.push(format!("{tool}: exited with {}", out.status));
            }
            Err(e) => {
                available = false;
                detail.push(format!("{tool}: not found ({e})"));
            }
        }
    }
    ToolchainStatus {
        language,
        available,
        detail,
    }
}
