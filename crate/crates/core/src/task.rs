//! Canonical task representation shared by every pipeline stage.

use crate::language::Language;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOrigin {
    SourceProvided,
    Synthesized,
}

/// One executable, assertion-style invocation of a task's solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub body: String,
    pub origin: TestOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub language: Language,
    pub source_dataset: String,
    pub instruction: String,
    /// Dataset-provided solution; also the canonical solution for normalization.
    pub initial_solution: String,
    #[serde(default)]
    pub tests: Vec<TestCase>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Task {
    /// Name of the function the tests are expected to call, if one can be found.
    pub fn entry_point(&self) -> Option<String> {
        if let Some(ep) = self.metadata.get("entry_point") {
            if !ep.trim().is_empty() {
                return Some(ep.trim().to_string());
            }
        }
        crate::syntax::detect_entry_point(self.language, &self.initial_solution)
    }
}
