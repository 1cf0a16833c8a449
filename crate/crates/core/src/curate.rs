//! Selection of the most efficient correct candidate and dataset emission.

use crate::exec::{ExecStatus, ExecutionProfile};
use crate::format::{self, ArtifactKind, FormatError};
use crate::language::Language;
use crate::metrics::{self, EfficiencyMetrics, NormalizedMetrics};
use crate::provider::CandidateSolution;
use crate::task::Task;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCandidate {
    pub candidate: CandidateSolution,
    pub status: ExecStatus,
    /// Present exactly when `status` is passed.
    pub metrics: Option<EfficiencyMetrics>,
}

impl MeasuredCandidate {
    /// Builds a measured candidate from repeated runs.
    ///
    /// The candidate passes only if every run passed; its metrics are the
    /// mean over runs. A passed run without memory samples is reported as a
    /// runtime error since it cannot be measured.
    pub fn from_runs(candidate: CandidateSolution, runs: &[ExecutionProfile]) -> Self {
        let failed = runs.iter().find(|p| p.status != ExecStatus::Passed);
        let (status, metrics) = match failed {
            Some(p) => (p.status, None),
            None if runs.is_empty() => (ExecStatus::RuntimeError, None),
            None => match metrics::repeated_profile_metrics(runs) {
                Ok(m) => (ExecStatus::Passed, Some(m)),
                Err(_) => (ExecStatus::RuntimeError, None),
            },
        };
        MeasuredCandidate {
            candidate,
            status,
            metrics,
        }
    }

    pub fn passed_metrics(&self) -> Option<&EfficiencyMetrics> {
        match (self.status, &self.metrics) {
            (ExecStatus::Passed, Some(m)) => Some(m),
            _ => None,
        }
    }
}

fn cmp_key(a: (f64, f64, f64), b: (f64, f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.total_cmp(&b.2))
}

/// Index of the passed candidate with the smallest (et, tmu, mu); earliest wins ties.
pub fn select_best(measured: &[MeasuredCandidate]) -> Option<usize> {
    measured
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.passed_metrics().map(|x| (i, x.selection_key())))
        .min_by(|(ia, ka), (ib, kb)| cmp_key(*ka, *kb).then(ia.cmp(ib)))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImprovementThresholds {
    /// Minimum relative gain required on the improved metric.
    pub delta: f64,
    /// Maximum relative regression tolerated on the other metric.
    pub rho: f64,
}

impl Default for ImprovementThresholds {
    fn default() -> Self {
        ImprovementThresholds {
            delta: 0.05,
            rho: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoImprovement,
    /// Time improved but the memory integral regressed past rho.
    TmuRegression,
    /// Memory integral improved but time regressed past rho.
    EtRegression,
    DegenerateCanonical,
    NotPassed,
    InitialFailed,
    NoPassingCandidate,
    GenerationFailed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NoImprovement => "no_improvement",
            DropReason::TmuRegression => "tmu_regression",
            DropReason::EtRegression => "et_regression",
            DropReason::DegenerateCanonical => "degenerate_canonical",
            DropReason::NotPassed => "not_passed",
            DropReason::InitialFailed => "initial_failed",
            DropReason::NoPassingCandidate => "no_passing_candidate",
            DropReason::GenerationFailed => "generation_failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Drop(DropReason),
}

/// Keeps a chosen solution only if it measurably beats the initial one.
pub fn require_improvement(
    chosen: &MeasuredCandidate,
    initial: &EfficiencyMetrics,
    th: &ImprovementThresholds,
) -> Decision {
    let Some(c) = chosen.passed_metrics() else {
        return Decision::Drop(DropReason::NotPassed);
    };
    if !(initial.et_s > 0.0 && initial.tmu_mbs > 0.0 && initial.mu_mb > 0.0) {
        return Decision::Drop(DropReason::DegenerateCanonical);
    }
    let faster = c.et_s <= (1.0 - th.delta) * initial.et_s;
    let leaner = c.tmu_mbs <= (1.0 - th.delta) * initial.tmu_mbs;
    let tmu_ok = c.tmu_mbs <= (1.0 + th.rho) * initial.tmu_mbs;
    let et_ok = c.et_s <= (1.0 + th.rho) * initial.et_s;
    if (faster && tmu_ok) || (leaner && et_ok) {
        Decision::Keep
    } else if faster {
        Decision::Drop(DropReason::TmuRegression)
    } else if leaner {
        Decision::Drop(DropReason::EtRegression)
    } else {
        Decision::Drop(DropReason::NoImprovement)
    }
}

/// One emitted instruction/response pair with efficiency metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedRecord {
    pub task_id: String,
    pub language: Language,
    pub instruction: String,
    pub response: String,
    pub chosen_metrics: EfficiencyMetrics,
    pub initial_metrics: EfficiencyMetrics,
    /// Chosen relative to initial.
    pub normalized: NormalizedMetrics,
    pub provider_label: String,
    pub source_dataset: String,
    pub environment_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurationOutcome {
    Curated(Box<CuratedRecord>),
    Dropped(DropReason),
}

/// Selects, checks improvement and builds the record for one task.
pub fn curate_task(
    task: &Task,
    initial_runs: &[ExecutionProfile],
    measured: &[MeasuredCandidate],
    th: &ImprovementThresholds,
    environment_label: &str,
) -> CurationOutcome {
    let initial = match metrics::repeated_profile_metrics(initial_runs) {
        Ok(m) => m,
        Err(_) => return CurationOutcome::Dropped(DropReason::InitialFailed),
    };
    let Some(best) = select_best(measured) else {
        return CurationOutcome::Dropped(DropReason::NoPassingCandidate);
    };
    let chosen = &measured[best];
    if let Decision::Drop(reason) = require_improvement(chosen, &initial, th) {
        return CurationOutcome::Dropped(reason);
    }
    let chosen_metrics = *chosen.passed_metrics().expect("selected candidates passed");
    let normalized = match metrics::normalize(&chosen_metrics, &initial) {
        Ok(n) => n,
        Err(_) => return CurationOutcome::Dropped(DropReason::DegenerateCanonical),
    };
    CurationOutcome::Curated(Box::new(CuratedRecord {
        task_id: task.id.clone(),
        language: task.language,
        instruction: task.instruction.clone(),
        response: chosen.candidate.source_code.clone(),
        chosen_metrics,
        initial_metrics: initial,
        normalized,
        provider_label: chosen.candidate.provider_label.clone(),
        source_dataset: task.source_dataset.clone(),
        environment_label: environment_label.to_string(),
    }))
}

/// Counts of emitted records per source dataset and language.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub by_language: BTreeMap<Language, usize>,
    pub by_source: BTreeMap<String, BTreeMap<Language, usize>>,
}

impl DatasetSummary {
    pub fn from_records(records: &[CuratedRecord]) -> Self {
        let mut s = DatasetSummary::default();
        for r in records {
            s.total += 1;
            *s.by_language.entry(r.language).or_default() += 1;
            *s.by_source
                .entry(r.source_dataset.clone())
                .or_default()
                .entry(r.language)
                .or_default() += 1;
        }
        s
    }

    fn grid(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["Dataset".to_string()];
        header.extend(Language::ALL.iter().map(|l| l.display_name().to_string()));
        header.push("Total".into());
        let mut rows = Vec::new();
        for (src, counts) in &self.by_source {
            let mut row = vec![src.clone()];
            row.extend(Language::ALL.iter().map(|l| counts.get(l).copied().unwrap_or(0).to_string()));
            row.push(counts.values().sum::<usize>().to_string());
            rows.push(row);
        }
        let mut total = vec!["Total".to_string()];
        total.extend(Language::ALL.iter().map(|l| self.by_language.get(l).copied().unwrap_or(0).to_string()));
        total.push(self.total.to_string());
        rows.push(total);
        (header, rows)
    }

    pub fn render_markdown(&self) -> String {
        let (header, rows) = self.grid();
        let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
        for r in rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let (header, rows) = self.grid();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Source rows by language columns, with totals.
    pub fn render_table(&self) -> String {
        let langs = Language::ALL;
        let width = self
            .by_source
            .keys()
            .map(|k| k.len())
            .chain(["Dataset".len(), "Total".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Dataset");
        for l in langs {
            let _ = write!(out, " {:>8}", l.display_name());
        }
        let _ = writeln!(out, " {:>8}", "Total");
        for (src, counts) in &self.by_source {
            let _ = write!(out, "{src:<width$}");
            for l in langs {
                let _ = write!(out, " {:>8}", counts.get(&l).copied().unwrap_or(0));
            }
            let _ = writeln!(out, " {:>8}", counts.values().sum::<usize>());
        }
        let _ = write!(out, "{:<width$}", "Total");
        for l in langs {
            let _ = write!(out, " {:>8}", self.by_language.get(&l).copied().unwrap_or(0));
        }
        let _ = writeln!(out, " {:>8}", self.total);
        out
    }
}

/// Writes records ordered by task id and returns the per-language summary.
pub fn emit_dataset(records: &[CuratedRecord], out_path: &Path) -> Result<DatasetSummary, FormatError> {
    let mut sorted: Vec<&CuratedRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    format::write_file(out_path, ArtifactKind::Dataset, &sorted)?;
    Ok(DatasetSummary::from_records(records))
}

pub fn parse_dataset(path: &Path) -> Result<Vec<CuratedRecord>, FormatError> {
    format::read_file(path, ArtifactKind::Dataset)
}
