//! Stage functions shared by the command line tool and the integration tests.

use crate::curate::{self, CuratedRecord, CurationOutcome, DatasetSummary, DropReason, ImprovementThresholds, MeasuredCandidate};
use crate::exec::{self, AdmissionGate, ExecError, ExecStatus, ExecutionProfile, ExecutionService, ResourceLimits};
use crate::format::{self, ArtifactKind, FormatError};
use crate::ingest::{self, FilterRuleSet, IngestError, NearDuplicateStats, SchemaMap, SkipReport};
use crate::language::Language;
use crate::metrics::{self, AggregateMetrics};
use crate::provider::{self, CandidateSolution, CompletionBackend, PromptTemplate, ProviderError, ProviderHandle};
use crate::report::{self, AggregationSet, ReportError, TaskResult};
use crate::task::Task;
use crate::testkit::{self, TestDropReason, TestkitConfig, TestkitError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Environment,
    Provider,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Input => "input",
            ErrorClass::Environment => "environment",
            ErrorClass::Provider => "provider",
        }
    }
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Provider(_) => ErrorClass::Provider,
            PipelineError::Exec(ExecError::InvalidLimits(_)) => ErrorClass::Input,
            PipelineError::Exec(_) => ErrorClass::Environment,
            _ => ErrorClass::Input,
        }
    }
}

impl From<TestkitError> for PipelineError {
    fn from(e: TestkitError) -> Self {
        match e {
            TestkitError::Provider(p) => PipelineError::Provider(p),
            TestkitError::Exec(x) => PipelineError::Exec(x),
            other => PipelineError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralConfig {
    /// Worker threads; 0 means one per available core.
    pub jobs: usize,
    /// Overrides the host-derived label recorded on profiles and records.
    pub environment_label: Option<String>,
    /// Directory for build/run scratch space; the system temp dir when unset.
    pub work_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub source_dataset: Option<String>,
    /// canonical field -> source field
    pub schema: BTreeMap<String, String>,
    pub default_language: Option<Language>,
    pub filter: FilterRuleSet,
    /// Tasks file of an evaluation set to decontaminate against.
    pub eval_set: Option<PathBuf>,
    pub near_duplicate_threshold: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            source_dataset: None,
            schema: BTreeMap::new(),
            default_language: None,
            filter: FilterRuleSet::default(),
            eval_set: None,
            near_duplicate_threshold: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TestkitSection {
    #[serde(flatten)]
    pub settings: TestkitConfig,
    /// Provider section used to synthesize tests for tasks that have none.
    pub provider: Option<String>,
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub providers: Vec<String>,
    pub n_per_provider: usize,
    pub template: Option<PathBuf>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { providers: Vec::new(), n_per_provider: 4, template: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub repeats: usize,
    #[serde(flatten)]
    pub limits: ResourceLimits,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { repeats: 3, limits: ResourceLimits::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub aggregation: AggregationSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub general: GeneralConfig,
    pub ingest: IngestConfig,
    pub testkit: TestkitSection,
    pub generation: GenerationConfig,
    pub profile: ProfileConfig,
    pub curate: ImprovementThresholds,
    pub report: ReportConfig,
    pub providers: BTreeMap<String, ProviderHandle>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Config = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.ingest.filter.validate()?;
        self.profile.limits.validate()?;
        if self.profile.repeats == 0 {
            return Err(PipelineError::Config("profile.repeats must be >= 1".into()));
        }
        if self.generation.n_per_provider == 0 {
            return Err(PipelineError::Config("generation.n_per_provider must be >= 1".into()));
        }
        let th = &self.curate;
        if !(0.0..1.0).contains(&th.delta) || th.rho < 0.0 {
            return Err(PipelineError::Config("curate.delta must be in [0, 1) and curate.rho >= 0".into()));
        }
        for handle in self.providers.values() {
            handle.validate()?;
        }
        Ok(())
    }

    pub fn provider(&self, section: &str) -> Result<&ProviderHandle, PipelineError> {
        self.providers.get(section).ok_or_else(|| {
            PipelineError::Config(format!(
                "no [providers.{section}] section (known: {})",
                self.providers.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Thread pool and execution service shared by the stages.
pub struct Runtime {
    pub exec: ExecutionService,
    pool: rayon::ThreadPool,
}

impl Runtime {
    pub fn new(general: &GeneralConfig) -> Result<Self, PipelineError> {
        let gate = Arc::new(AdmissionGate::per_core());
        let mut exec = ExecutionService::new(gate)
            .with_environment_label(general.environment_label.clone().unwrap_or_else(exec::host_environment_label));
        if let Some(root) = &general.work_root {
            std::fs::create_dir_all(root).map_err(ExecError::Io)?;
            exec = exec.with_work_root(root.clone());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(general.jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        Ok(Runtime { exec, pool })
    }

    pub fn jobs(&self) -> usize {
        self.pool.current_num_threads()
    }

    fn require_languages(&self, tasks: &[Task]) -> Result<(), PipelineError> {
        let langs: BTreeSet<Language> = tasks.iter().map(|t| t.language).collect();
        for l in langs {
            self.exec.require_toolchain(l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: SkipReport,
    pub rejected: BTreeMap<String, usize>,
    pub duplicates_removed: usize,
    pub eval_collisions_removed: usize,
    pub near_duplicates: Option<NearDuplicateStats>,
    pub kept: usize,
}

/// Loads, filters and deduplicates a source file.
pub fn ingest_stage(cfg: &IngestConfig, source: &Path) -> Result<(Vec<Task>, IngestReport), PipelineError> {
    let mut schema = SchemaMap::new(cfg.schema.clone())?;
    if let Some(l) = cfg.default_language {
        schema = schema.with_default_language(l);
    }
    let source_name = cfg.source_dataset.clone().unwrap_or_else(|| {
        source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "source".into())
    });
    let loaded = ingest::load_tasks(source, &source_name, &schema)?;
    let n_loaded = loaded.tasks.len();
    let filtered = ingest::filter_tasks(loaded.tasks, &cfg.filter)?;
    let mut rejected = BTreeMap::new();
    for (_, reason) in &filtered.rejected {
        *rejected.entry(reason.to_string()).or_insert(0) += 1;
    }
    let eval: Option<Vec<Task>> = match &cfg.eval_set {
        Some(p) => Some(format::read_file(p, ArtifactKind::Tasks)?),
        None => None,
    };
    let dedup = ingest::dedup_tasks(filtered.kept, eval.as_deref());
    let near = eval
        .as_deref()
        .map(|e| ingest::near_duplicate_stats(&dedup.tasks, e, cfg.near_duplicate_threshold));
    let report = IngestReport {
        loaded: n_loaded,
        skipped: loaded.skipped,
        rejected,
        duplicates_removed: dedup.duplicates_removed,
        eval_collisions_removed: dedup.eval_collisions_removed,
        near_duplicates: near,
        kept: dedup.tasks.len(),
    };
    Ok((dedup.tasks, report))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AugmentReport {
    pub tasks_in: usize,
    pub tests_synthesized: usize,
    pub tests_dropped: BTreeMap<String, usize>,
    pub broken_initial_solutions: Vec<String>,
    pub synthesis_failures: Vec<(String, String)>,
    pub untestable_removed: usize,
    pub tasks_out: usize,
}

fn drop_reason_name(r: TestDropReason) -> &'static str {
    match r {
        TestDropReason::AssertionFailure => "assertion_failure",
        TestDropReason::RuntimeError => "runtime_error",
        TestDropReason::Timeout => "timeout",
        TestDropReason::CompileError => "compile_error",
    }
}

/// Synthesizes tests for tasks below `min_tests` and validates every test against the initial solution.
pub fn augment_stage(
    rt: &Runtime,
    tasks: Vec<Task>,
    synthesizer: Option<&dyn CompletionBackend>,
    template: &PromptTemplate,
    cfg: &TestkitConfig,
) -> Result<(Vec<Task>, AugmentReport), PipelineError> {
    rt.require_languages(&tasks)?;
    enum Outcome {
        Validated { synthesized: usize, kept: Vec<crate::task::TestCase>, dropped: Vec<TestDropReason> },
        Broken,
        SynthesisFailed(String),
    }
    let outcomes: Vec<Result<Outcome, PipelineError>> = rt.pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let mut tests = task.tests.clone();
                let mut synthesized = 0;
                if tests.len() < cfg.min_tests.max(1) {
                    if let Some(p) = synthesizer {
                        match testkit::synthesize_tests(task, p, cfg.tests_per_task, template) {
                            Ok(new) => {
                                synthesized = new.len();
                                tests.extend(new);
                            }
                            Err(TestkitError::Provider(e)) if !matches!(e, ProviderError::Config(_)) => {
                                return Ok(Outcome::SynthesisFailed(e.to_string()))
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
                match testkit::validate_tests(task, &tests, &rt.exec, cfg) {
                    Ok(v) => Ok(Outcome::Validated {
                        synthesized,
                        kept: v.kept,
                        dropped: v.dropped.into_iter().map(|d| d.1).collect(),
                    }),
                    Err(TestkitError::InitialSolutionBroken { .. }) => Ok(Outcome::Broken),
                    Err(e) => Err(e.into()),
                }
            })
            .collect()
    });
    let mut report = AugmentReport { tasks_in: tasks.len(), ..Default::default() };
    let mut pairs = Vec::new();
    for (task, outcome) in tasks.into_iter().zip(outcomes) {
        match outcome? {
            Outcome::Validated { synthesized, kept, dropped } => {
                report.tests_synthesized += synthesized;
                for d in dropped {
                    *report.tests_dropped.entry(drop_reason_name(d).to_string()).or_insert(0) += 1;
                }
                pairs.push((task, kept));
            }
            Outcome::Broken => report.broken_initial_solutions.push(task.id),
            Outcome::SynthesisFailed(msg) => {
                report.synthesis_failures.push((task.id.clone(), msg));
                pairs.push((task, Vec::new()));
            }
        }
    }
    let (kept, removed) = testkit::drop_untestable(pairs, cfg.min_tests);
    report.untestable_removed = removed;
    report.tasks_out = kept.len();
    Ok((kept, report))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GenerateReport {
    pub tasks: usize,
    pub candidates: usize,
    pub failures: Vec<(String, String, String)>,
    pub generation_failed: Vec<String>,
}

pub fn generate_stage(
    rt: &Runtime,
    tasks: &[Task],
    providers: &[Box<dyn CompletionBackend>],
    n_per_provider: usize,
    template: &PromptTemplate,
) -> Result<(Vec<CandidateSolution>, GenerateReport), PipelineError> {
    if providers.is_empty() {
        return Err(PipelineError::Config("no generation providers configured".into()));
    }
    let outcomes: Vec<_> = rt.pool.install(|| {
        tasks
            .par_iter()
            .map(|t| provider::generate_candidates(t, providers, n_per_provider, template))
            .collect()
    });
    let mut report = GenerateReport { tasks: tasks.len(), ..Default::default() };
    let mut candidates = Vec::new();
    for (task, outcome) in tasks.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(o) => o,
            // a task the prompt cannot be built for yields no candidates
            Err(e @ ProviderError::Config(_)) => {
                report.failures.push((task.id.clone(), "-".into(), e.to_string()));
                report.generation_failed.push(task.id.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for (label, msg) in outcome.failures {
            report.failures.push((task.id.clone(), label, msg));
        }
        if outcome.generation_failed {
            report.generation_failed.push(task.id.clone());
        }
        candidates.extend(outcome.candidates);
    }
    report.candidates = candidates.len();
    if !tasks.is_empty() && report.generation_failed.len() == tasks.len() {
        let first = report.failures.first().map(|f| f.2.clone()).unwrap_or_default();
        return Err(ProviderError::Unavailable {
            label: "all providers".into(),
            task_id: format!("every task ({first})"),
        }
        .into());
    }
    Ok((candidates, report))
}

/// Measured runs of one solution: the task's initial solution when `candidate` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub task_id: String,
    pub subject: String,
    pub language: Language,
    #[serde(default)]
    pub candidate: Option<CandidateSolution>,
    pub runs: Vec<ExecutionProfile>,
    pub baseline_mb: Option<f64>,
}

impl ProfileRecord {
    pub fn is_initial(&self) -> bool {
        self.candidate.is_none()
    }
}

pub fn subject_label(candidate: Option<&CandidateSolution>) -> String {
    match candidate {
        None => "initial".into(),
        Some(c) => format!("{}#{}", c.provider_label, c.sample_index),
    }
}

/// Profiles initial solutions, or the given candidates against their task's tests.
pub fn profile_stage(
    rt: &Runtime,
    tasks: &[Task],
    candidates: Option<&[CandidateSolution]>,
    profile: &ProfileConfig,
) -> Result<Vec<ProfileRecord>, PipelineError> {
    rt.require_languages(tasks)?;
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let jobs: Vec<(&Task, Option<&CandidateSolution>)> = match candidates {
        None => tasks.iter().map(|t| (t, None)).collect(),
        Some(cs) => cs
            .iter()
            .map(|c| {
                by_id
                    .get(c.task_id.as_str())
                    .map(|t| (*t, Some(c)))
                    .ok_or_else(|| PipelineError::Input(format!("candidate for unknown task {}", c.task_id)))
            })
            .collect::<Result<_, _>>()?,
    };
    for l in jobs.iter().map(|j| j.0.language).collect::<BTreeSet<_>>() {
        // warm the per-language baseline before parallel work
        if let Err(e) = rt.exec.baseline_mb(l) {
            log::warn!("baseline for {}: {e}", l.as_str());
        }
    }
    let results: Vec<Result<ProfileRecord, PipelineError>> = rt.pool.install(|| {
        jobs.par_iter()
            .map(|(task, cand)| {
                let source = cand.map_or(task.initial_solution.as_str(), |c| c.source_code.as_str());
                let plan = rt.exec.prepare(task.language, source, &task.tests)?;
                let runs = if plan.compile_failed() {
                    vec![rt.exec.run_once(&plan, &profile.limits)?]
                } else {
                    rt.exec.measure(&plan, &profile.limits, profile.repeats)?
                };
                Ok(ProfileRecord {
                    task_id: task.id.clone(),
                    subject: subject_label(*cand),
                    language: task.language,
                    candidate: cand.cloned(),
                    runs,
                    baseline_mb: rt.exec.baseline_mb(task.language).ok(),
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub task_id: String,
    #[serde(default)]
    pub record: Option<CuratedRecord>,
    #[serde(default)]
    pub dropped: Option<DropReason>,
    pub n_candidates: usize,
    pub n_passed: usize,
}

/// Selects the most efficient passing candidate per task and applies the improvement filter.
pub fn select_stage(
    tasks: &[Task],
    profiles: &[ProfileRecord],
    th: &ImprovementThresholds,
    environment_label: &str,
) -> Vec<SelectionRecord> {
    let mut initial: HashMap<&str, &ProfileRecord> = HashMap::new();
    let mut cands: HashMap<&str, Vec<&ProfileRecord>> = HashMap::new();
    for p in profiles {
        if p.is_initial() {
            initial.insert(p.task_id.as_str(), p);
        } else {
            cands.entry(p.task_id.as_str()).or_default().push(p);
        }
    }
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut measured: Vec<MeasuredCandidate> = cands
            .get(task.id.as_str())
            .map(|v| {
                v.iter()
                    .map(|p| MeasuredCandidate::from_runs(p.candidate.clone().expect("candidate record"), &p.runs))
                    .collect()
            })
            .unwrap_or_default();
        measured.sort_by_key(|m| m.candidate.key());
        let n_passed = measured.iter().filter(|m| m.passed_metrics().is_some()).count();
        let (record, dropped) = if measured.is_empty() {
            (None, Some(DropReason::GenerationFailed))
        } else {
            match initial.get(task.id.as_str()) {
                None => (None, Some(DropReason::InitialFailed)),
                Some(init) => match curate::curate_task(task, &init.runs, &measured, th, environment_label) {
                    CurationOutcome::Curated(r) => (Some(*r), None),
                    CurationOutcome::Dropped(d) => (None, Some(d)),
                },
            }
        };
        out.push(SelectionRecord {
            task_id: task.id.clone(),
            record,
            dropped,
            n_candidates: measured.len(),
            n_passed,
        });
    }
    out
}

pub fn drop_counts(selected: &[SelectionRecord]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for s in selected {
        if let Some(d) = s.dropped {
            *m.entry(d.as_str()).or_insert(0) += 1;
        }
    }
    m
}

pub fn emit_stage(selected: &[SelectionRecord], out: &Path) -> Result<(Vec<CuratedRecord>, DatasetSummary), PipelineError> {
    let records: Vec<CuratedRecord> = selected.iter().filter_map(|s| s.record.clone()).collect();
    let summary = curate::emit_dataset(&records, out)?;
    let mut sorted = records;
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok((sorted, summary))
}

/// Turns profiles into per-task results for one system.
///
/// Each task's solution is the lowest-keyed candidate profiled for it; a
/// task without one counts as failed. Canonical metrics come from the
/// initial-solution profile.
pub fn results_from_profiles(tasks: &[Task], profiles: &[ProfileRecord]) -> Vec<TaskResult> {
    let mut initial = HashMap::new();
    let mut best: HashMap<&str, &ProfileRecord> = HashMap::new();
    for p in profiles {
        match &p.candidate {
            None => {
                initial.insert(p.task_id.as_str(), p);
            }
            Some(c) => {
                let slot = best.entry(p.task_id.as_str()).or_insert(p);
                if c.key() < slot.candidate.as_ref().expect("candidate").key() {
                    *slot = p;
                }
            }
        }
    }
    tasks
        .iter()
        .map(|t| {
            let canonical = initial
                .get(t.id.as_str())
                .and_then(|p| metrics::repeated_profile_metrics(&p.runs).ok());
            match best.get(t.id.as_str()) {
                Some(p) => {
                    let m = MeasuredCandidate::from_runs(p.candidate.clone().expect("candidate"), &p.runs);
                    TaskResult { task_id: t.id.clone(), status: m.status, metrics: m.metrics, canonical }
                }
                None => TaskResult { task_id: t.id.clone(), status: ExecStatus::RuntimeError, metrics: None, canonical },
            }
        })
        .collect()
}

/// Keeps one candidate per task (the lowest provider/sample key).
pub fn first_candidate_per_task(candidates: &[CandidateSolution]) -> Vec<CandidateSolution> {
    let mut best: BTreeMap<&str, &CandidateSolution> = BTreeMap::new();
    for c in candidates {
        let slot = best.entry(c.task_id.as_str()).or_insert(c);
        if c.key() < slot.key() {
            *slot = c;
        }
    }
    best.into_values().cloned().collect()
}

/// Profiles one solution per task plus the initial solutions and returns per-task results.
pub fn evaluate_candidates(
    rt: &Runtime,
    tasks: &[Task],
    candidates: &[CandidateSolution],
    profile: &ProfileConfig,
) -> Result<Vec<TaskResult>, PipelineError> {
    let chosen = first_candidate_per_task(candidates);
    let mut profiles = profile_stage(rt, tasks, None, profile)?;
    profiles.extend(profile_stage(rt, tasks, Some(&chosen), profile)?);
    Ok(results_from_profiles(tasks, &profiles))
}

/// Aggregate of one system over its own correct tasks, for repeated-run statistics.
pub fn own_aggregate(results: &[TaskResult]) -> Result<AggregateMetrics, PipelineError> {
    let row = report::single_row("run", results)?;
    Ok(AggregateMetrics {
        n_tasks: results.len(),
        mean_et: row.et,
        mean_net: row.net,
        mean_mu: row.mu,
        mean_nmu: row.nmu,
        mean_tmu: row.tmu,
        mean_ntmu: row.ntmu,
    })
}

/// Loads tasks, reporting artifacts of the wrong kind as input errors.
pub fn read_tasks(path: &Path) -> Result<Vec<Task>, PipelineError> {
    Ok(format::read_file(path, ArtifactKind::Tasks)?)
}

pub fn connect_all(cfg: &Config, sections: &[String]) -> Result<Vec<Box<dyn CompletionBackend>>, PipelineError> {
    sections
        .iter()
        .map(|s| Ok(cfg.provider(s)?.connect()?))
        .collect()
}

pub fn load_template(path: Option<&Path>, default: PromptTemplate) -> Result<PromptTemplate, PipelineError> {
    match path {
        Some(p) => Ok(PromptTemplate::from_file(p)?),
        None => Ok(default),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SeriesStats {
    fn of(xs: &[f64]) -> Option<Self> {
        Some(SeriesStats {
            mean: metrics::mean(xs)?,
            std: metrics::sample_std(xs).unwrap_or(0.0),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Host noise statistics from programs with known time and memory behavior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub environment_label: String,
    pub runs: usize,
    pub baseline_mb: f64,
    pub sleep_et_s: Vec<f64>,
    pub sleep_stats: Option<SeriesStats>,
    /// Runs with ET in [0.5, 0.6] s.
    pub sleep_in_bounds: usize,
    pub hold_over_baseline_mb: Vec<f64>,
    pub hold_stats: Option<SeriesStats>,
    /// Runs with peak above baseline in [80, 140] MB.
    pub hold_in_bounds: usize,
}

pub const SLEEP_BOUNDS_S: (f64, f64) = (0.5, 0.6);
pub const HOLD_BOUNDS_MB: (f64, f64) = (80.0, 140.0);

pub fn calibrate(rt: &Runtime, runs: usize) -> Result<CalibrationReport, PipelineError> {
    use exec::calibration;
    let lang = Language::Python;
    rt.exec.require_toolchain(lang)?;
    let baseline_mb = rt.exec.baseline_mb(lang)?;
    let limits = ResourceLimits::default();
    let sleep = rt.exec.prepare(lang, &calibration::sleep_program(), &[])?;
    let hold = rt.exec.prepare(lang, &calibration::hold_program(), &[])?;
    let mut sleep_et_s = Vec::with_capacity(runs);
    let mut hold_over = Vec::with_capacity(runs);
    for _ in 0..runs {
        let p = rt.exec.run_once(&sleep, &limits)?;
        if p.status != ExecStatus::Passed {
            return Err(ExecError::Environment(format!("sleep calibration program ended with {}", p.status.as_str())).into());
        }
        sleep_et_s.push(p.wall_time_s);
        let p = rt.exec.run_once(&hold, &limits)?;
        if p.status != ExecStatus::Passed {
            return Err(ExecError::Environment(format!("hold calibration program ended with {}", p.status.as_str())).into());
        }
        hold_over.push(p.peak_mb - baseline_mb);
    }
    let within = |xs: &[f64], (lo, hi): (f64, f64)| xs.iter().filter(|&&x| x >= lo && x <= hi).count();
    Ok(CalibrationReport {
        environment_label: rt.exec.environment_label().to_string(),
        runs,
        baseline_mb,
        sleep_stats: SeriesStats::of(&sleep_et_s),
        sleep_in_bounds: within(&sleep_et_s, SLEEP_BOUNDS_S),
        hold_stats: SeriesStats::of(&hold_over),
        hold_in_bounds: within(&hold_over, HOLD_BOUNDS_MB),
        sleep_et_s,
        hold_over_baseline_mb: hold_over,
    })
}
