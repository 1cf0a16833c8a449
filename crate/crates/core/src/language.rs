use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Languages a task can be written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
    Cpp,
    Java,
    Rust,
    Go,
}

impl Language {
    pub const ALL: [Language; 5] = [
        Language::Python,
        Language::Cpp,
        Language::Java,
        Language::Rust,
        Language::Go,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Python => "python",
            Language::Cpp => "cpp",
            Language::Java => "java",
            Language::Rust => "rust",
            Language::Go => "go",
        }
    }

    /// Display name used in summary tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Language::Python => "Python",
            Language::Cpp => "C++",
            Language::Java => "Java",
            Language::Rust => "Rust",
            Language::Go => "Go",
        }
    }

    /// Fence info strings that identify this language in markdown.
    pub fn fence_aliases(self) -> &'static [&'static str] {
        match self {
            Language::Python => &["python", "py", "python3"],
            Language::Cpp => &["cpp", "c++", "cxx", "cc"],
            Language::Java => &["java"],
            Language::Rust => &["rust", "rs"],
            Language::Go => &["go", "golang"],
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported language label '{0}'")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        Language::ALL
            .into_iter()
            .find(|l| l.fence_aliases().contains(&norm.as_str()))
            .ok_or_else(|| UnknownLanguage(s.to_string()))
    }
}
