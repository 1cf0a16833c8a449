//! Loading, filtering and deduplicating candidate tasks.

use crate::language::Language;
use crate::provider::extract_code_block_any;
use crate::syntax;
use crate::task::{Task, TestCase, TestOrigin};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no usable records in {path} (skipped: {report})")]
    EmptyCollection { path: PathBuf, report: SkipReport },
    #[error("invalid schema map: {0}")]
    InvalidSchema(String),
    #[error("invalid filter rules: {0}")]
    InvalidRules(String),
}

/// A raw line from a source dataset, before normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRecord {
    pub source_dataset: String,
    pub raw_fields: BTreeMap<String, String>,
    pub language_hint: Option<String>,
}

/// Canonical field names a schema map may bind.
pub const CANONICAL_FIELDS: &[&str] = &[
    "id",
    "language",
    "instruction",
    "initial_solution",
    "tests",
    "entry_point",
];

/// Explicit mapping from canonical task fields to a source's field names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaMap {
    fields: BTreeMap<String, String>,
    #[serde(default)]
    default_language: Option<Language>,
}

impl SchemaMap {
    pub fn new(fields: BTreeMap<String, String>) -> Result<Self, IngestError> {
        for key in fields.keys() {
            if !CANONICAL_FIELDS.contains(&key.as_str()) {
                return Err(IngestError::InvalidSchema(format!(
                    "unknown canonical field '{key}' (expected one of {})",
                    CANONICAL_FIELDS.join(", ")
                )));
            }
        }
        Ok(SchemaMap {
            fields,
            default_language: None,
        })
    }

    /// Parses `canonical=source` pairs, e.g. `instruction=question`.
    pub fn parse_pairs<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<Self, IngestError> {
        let mut fields = BTreeMap::new();
        for pair in pairs {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                IngestError::InvalidSchema(format!("expected canonical=source, got '{pair}'"))
            })?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::new(fields)
    }

    pub fn with_default_language(mut self, language: Language) -> Self {
        self.default_language = Some(language);
        self
    }

    fn source_field<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.fields.get(canonical).map(String::as_str).unwrap_or(canonical)
    }

    fn is_mapped_source(&self, source_field: &str) -> bool {
        CANONICAL_FIELDS
            .iter()
            .any(|c| self.source_field(c) == source_field)
    }
}

/// Counts of skipped records keyed by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport(pub BTreeMap<String, usize>);

impl SkipReport {
    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn get(&self, reason: &str) -> usize {
        self.0.get(reason).copied().unwrap_or(0)
    }

    fn bump(&mut self, reason: &str) {
        *self.0.entry(reason.to_string()).or_default() += 1;
    }
}

impl std::fmt::Display for SkipReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub tasks: Vec<Task>,
    pub skipped: SkipReport,
}

/// Parses one source line into a record. Values must be scalars.
pub fn parse_source_line(
    line: &str,
    source_dataset: &str,
    schema: &SchemaMap,
) -> Result<SourceRecord, &'static str> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|_| "malformed_record")?;
    let obj = value.as_object().ok_or("malformed_record")?;
    let mut raw_fields = BTreeMap::new();
    for (k, v) in obj {
        let s = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            serde_json::Value::Null => continue,
            _ => return Err("malformed_record"),
        };
        raw_fields.insert(k.clone(), s);
    }
    let language_hint = raw_fields.get(schema.source_field("language")).cloned();
    Ok(SourceRecord {
        source_dataset: source_dataset.to_string(),
        raw_fields,
        language_hint,
    })
}

fn fence_language(text: &str) -> Option<Language> {
    text.lines()
        .map(str::trim_start)
        .find_map(|l| l.strip_prefix("```"))
        .and_then(|info| info.split_whitespace().next())
        .and_then(|info| info.parse().ok())
}

/// Splits a tests field into individual test bodies on blank lines.
pub fn split_tests(task_id: &str, text: &str) -> Vec<TestCase> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, out: &mut Vec<TestCase>| {
        if !current.is_empty() {
            out.push(TestCase {
                id: format!("{task_id}-t{}", out.len()),
                body: current.join("\n"),
                origin: TestOrigin::SourceProvided,
            });
            current.clear();
        }
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut out);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut out);
    out
}

/// Normalizes a source record into a task, or names the reason it was skipped.
pub fn normalize_record(
    record: &SourceRecord,
    line_no: usize,
    schema: &SchemaMap,
) -> Result<Task, &'static str> {
    let field = |canonical: &str| {
        record
            .raw_fields
            .get(schema.source_field(canonical))
            .filter(|s| !s.trim().is_empty())
    };
    let instruction = field("instruction").ok_or("missing_instruction")?.clone();
    let raw_solution = field("initial_solution").ok_or("missing_solution")?;
    let language = match record.language_hint.as_deref().filter(|s| !s.trim().is_empty()) {
        Some(hint) => hint.parse::<Language>().map_err(|_| "unknown_language")?,
        None => fence_language(raw_solution)
            .or(schema.default_language)
            .ok_or("unknown_language")?,
    };
    let initial_solution = if raw_solution.contains("```") {
        extract_code_block_any(raw_solution, language).ok_or("missing_solution")?
    } else {
        raw_solution.clone()
    };
    if initial_solution.trim().is_empty() {
        return Err("missing_solution");
    }
    let id = field("id")
        .cloned()
        .unwrap_or_else(|| format!("{}-{line_no}", record.source_dataset));
    let tests = field("tests")
        .map(|t| split_tests(&id, t))
        .unwrap_or_default();
    let mut metadata: BTreeMap<String, String> = record
        .raw_fields
        .iter()
        .filter(|(k, _)| !schema.is_mapped_source(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(ep) = field("entry_point") {
        metadata.insert("entry_point".into(), ep.clone());
    }
    Ok(Task {
        id,
        language,
        source_dataset: record.source_dataset.clone(),
        instruction,
        initial_solution,
        tests,
        metadata,
    })
}

/// Loads tasks from a line-per-record source file.
pub fn load_tasks(
    source_path: &Path,
    source_dataset: &str,
    schema: &SchemaMap,
) -> Result<LoadOutcome, IngestError> {
    if source_dataset.trim().is_empty() {
        return Err(IngestError::InvalidSchema("source_dataset label is empty".into()));
    }
    let text = std::fs::read_to_string(source_path).map_err(|source| IngestError::Io {
        path: source_path.to_path_buf(),
        source,
    })?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let results: Vec<Result<Task, &'static str>> = lines
        .par_iter()
        .map(|&(line_no, line)| {
            let record = parse_source_line(line, source_dataset, schema)?;
            normalize_record(&record, line_no, schema)
        })
        .collect();

    let mut skipped = SkipReport::default();
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for result in results {
        match result {
            Ok(task) => {
                if seen.insert(task.id.clone()) {
                    tasks.push(task);
                } else {
                    skipped.bump("duplicate_id");
                }
            }
            Err(reason) => skipped.bump(reason),
        }
    }
    if tasks.is_empty() {
        return Err(IngestError::EmptyCollection {
            path: source_path.to_path_buf(),
            report: skipped,
        });
    }
    Ok(LoadOutcome { tasks, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRuleSet {
    pub max_solution_bytes: usize,
    pub min_solution_lines: usize,
    pub require_parseable: bool,
    /// Rejected when they appear anywhere in the solution.
    pub banned_substrings: Vec<String>,
    /// Rejected when a solution line consists of exactly this text.
    pub banned_lines: Vec<String>,
    pub require_tests_or_augmentable: bool,
}

impl Default for FilterRuleSet {
    fn default() -> Self {
        FilterRuleSet {
            max_solution_bytes: 65536,
            min_solution_lines: 3,
            require_parseable: true,
            banned_substrings: vec!["TODO".into()],
            banned_lines: vec!["...".into()],
            require_tests_or_augmentable: true,
        }
    }
}

impl FilterRuleSet {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.max_solution_bytes == 0 {
            return Err(IngestError::InvalidRules("max_solution_bytes must be > 0".into()));
        }
        if self.min_solution_lines == 0 {
            return Err(IngestError::InvalidRules("min_solution_lines must be >= 1".into()));
        }
        Ok(())
    }

    /// Name of the first rule `task` fails, if any.
    pub fn first_failure(&self, task: &Task) -> Option<&'static str> {
        let sol = &task.initial_solution;
        if sol.len() > self.max_solution_bytes {
            return Some("max_solution_bytes");
        }
        if sol.lines().filter(|l| !l.trim().is_empty()).count() < self.min_solution_lines {
            return Some("min_solution_lines");
        }
        let banned_sub = self
            .banned_substrings
            .iter()
            .any(|b| !b.is_empty() && sol.contains(b.as_str()));
        let banned_line = sol
            .lines()
            .any(|l| self.banned_lines.iter().any(|b| l.trim() == b));
        if banned_sub || banned_line {
            return Some("banned_substrings");
        }
        if self.require_parseable && syntax::check_lexes(task.language, sol).is_err() {
            return Some("require_parseable");
        }
        if self.require_tests_or_augmentable && task.tests.is_empty() && task.entry_point().is_none()
        {
            return Some("require_tests_or_augmentable");
        }
        None
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<Task>,
    pub rejected: Vec<(String, String)>,
}

pub fn filter_tasks(tasks: Vec<Task>, rules: &FilterRuleSet) -> Result<FilterOutcome, IngestError> {
    rules.validate()?;
    let verdicts: Vec<Option<&'static str>> =
        tasks.par_iter().map(|t| rules.first_failure(t)).collect();
    let mut out = FilterOutcome::default();
    for (task, verdict) in tasks.into_iter().zip(verdicts) {
        match verdict {
            None => out.kept.push(task),
            Some(reason) => out.rejected.push((task.id, reason.to_string())),
        }
    }
    Ok(out)
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Key under which two tasks count as exact duplicates.
pub fn dedup_key(task: &Task) -> String {
    format!(
        "{}\u{0}{}",
        collapse_ws(&task.instruction),
        collapse_ws(&task.initial_solution)
    )
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub tasks: Vec<Task>,
    pub duplicates_removed: usize,
    pub eval_collisions_removed: usize,
}

/// Removes exact duplicates (first occurrence wins) and exact matches of the eval set.
pub fn dedup_tasks(tasks: Vec<Task>, eval_set: Option<&[Task]>) -> DedupOutcome {
    let eval_keys: HashSet<String> = eval_set
        .unwrap_or_default()
        .iter()
        .map(dedup_key)
        .collect();
    let mut seen = HashSet::new();
    let mut out = DedupOutcome::default();
    for task in tasks {
        let key = dedup_key(&task);
        if eval_keys.contains(&key) {
            out.eval_collisions_removed += 1;
        } else if !seen.insert(key) {
            out.duplicates_removed += 1;
        } else {
            out.tasks.push(task);
        }
    }
    out
}

fn vocabulary(task: &Task) -> BTreeSet<String> {
    let text = format!("{} {}", task.instruction, task.initial_solution);
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard overlap of the word vocabularies of two tasks.
pub fn vocabulary_overlap(a: &Task, b: &Task) -> f64 {
    let va = vocabulary(a);
    let vb = vocabulary(b);
    let union = va.union(&vb).count();
    if union == 0 {
        return 0.0;
    }
    va.intersection(&vb).count() as f64 / union as f64
}

/// Near-duplicate statistics against an evaluation set. Reported, never filtered on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearDuplicateStats {
    pub threshold: f64,
    pub tasks_over_threshold: usize,
    pub max_overlap: f64,
    pub mean_max_overlap: f64,
}

pub fn near_duplicate_stats(tasks: &[Task], eval_set: &[Task], threshold: f64) -> NearDuplicateStats {
    let eval_vocab: Vec<BTreeSet<String>> = eval_set.iter().map(vocabulary).collect();
    let maxima: Vec<f64> = tasks
        .par_iter()
        .map(|t| {
            let v = vocabulary(t);
            eval_vocab
                .iter()
                .map(|e| {
                    let union = v.union(e).count();
                    if union == 0 {
                        0.0
                    } else {
                        v.intersection(e).count() as f64 / union as f64
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let n = maxima.len().max(1) as f64;
    NearDuplicateStats {
        threshold,
        tasks_over_threshold: maxima.iter().filter(|m| **m >= threshold).count(),
        max_overlap: maxima.iter().copied().fold(0.0, f64::max),
        mean_max_overlap: maxima.iter().sum::<f64>() / n,
    }
}
