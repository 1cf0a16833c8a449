use clap::{Args, Parser, Subcommand};
use effiset_core::curate::{self, DatasetSummary};
use effiset_core::format::{self, ArtifactKind, FormatError};
use effiset_core::language::Language;
use effiset_core::pipeline::{self, Config, PipelineError, ProfileRecord, Runtime, SelectionRecord};
use effiset_core::provider::{CandidateSolution, PromptTemplate};
use effiset_core::report::{self, AggregationSet, OutputFormat, TaskResult};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "effiset", version, about = "Build efficiency-optimized code datasets and efficiency reports")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ProfileFlags {
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    mem_interval_ms: Option<f64>,
    #[arg(long)]
    timeout_s: Option<f64>,
    #[arg(long)]
    memory_cap_mb: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw source file, filter and deduplicate it into a tasks file.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        source_dataset: Option<String>,
        /// Field mapping as canonical=source; repeatable.
        #[arg(long = "field")]
        fields: Vec<String>,
        #[arg(long)]
        default_language: Option<Language>,
        /// Tasks file to remove exact matches of.
        #[arg(long)]
        eval_set: Option<PathBuf>,
    },
    /// Synthesize missing tests and keep only tests the initial solution passes.
    AugmentTests {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Provider section used for test synthesis.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        n_tests: Option<usize>,
        #[arg(long)]
        min_tests: Option<usize>,
        #[arg(long)]
        timeout_s: Option<f64>,
    },
    /// Request candidate solutions from the configured providers.
    Generate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Provider sections; repeatable.
        #[arg(long = "provider")]
        providers: Vec<String>,
        #[arg(long)]
        n_candidates: Option<usize>,
    },
    /// Profile initial solutions, or candidates when --candidates is given.
    Profile {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limits: ProfileFlags,
    },
    /// Choose the most efficient passing candidate per task and apply the improvement filter.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        /// Profile files (initial and candidate); repeatable.
        #[arg(long = "profiles", required = true)]
        profiles: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Minimum relative improvement (delta).
        #[arg(long)]
        min_improvement: Option<f64>,
    },
    /// Write kept selections as the dataset and print its summary table.
    Emit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
    },
    /// Compare two systems. Inputs are results files, or candidates files profiled against --tasks.
    Evaluate {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long, default_value = "baseline")]
        baseline_label: String,
        #[arg(long, default_value = "candidate")]
        candidate_label: String,
        #[arg(long)]
        aggregation: Option<AggregationSet>,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
        /// Repeat the candidate evaluation this many times and report mean and std.
        #[arg(long)]
        runs: Option<usize>,
        /// Directory for the computed results files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        limits: ProfileFlags,
    },
    /// Summarize a dataset, results or selection file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
        #[arg(long, default_value = "model")]
        label: String,
    },
    /// Run the calibration programs and print host noise statistics.
    Calibrate {
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn exit_code(class: pipeline::ErrorClass) -> u8 {
    match class {
        pipeline::ErrorClass::Input => 2,
        pipeline::ErrorClass::Environment => 3,
        pipeline::ErrorClass::Provider => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let report = ErrorReport { error: class.as_str(), message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(exit_code(class))
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn load_config(cli: &Cli) -> Result<Config, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.general.jobs = j;
    }
    Ok(cfg)
}

fn apply_profile_flags(cfg: &mut Config, f: &ProfileFlags) -> Result<(), PipelineError> {
    if let Some(r) = f.repeats {
        cfg.profile.repeats = r;
    }
    if let Some(v) = f.mem_interval_ms {
        cfg.profile.limits.mem_sample_interval_ms = v;
    }
    if let Some(v) = f.timeout_s {
        cfg.profile.limits.wall_timeout_s = v;
    }
    if let Some(v) = f.memory_cap_mb {
        cfg.profile.limits.memory_cap_mb = v;
    }
    cfg.validate()
}

fn read_results_or_candidates(
    path: &Path,
    tasks: Option<&[effiset_core::task::Task]>,
    rt: &mut Option<Runtime>,
    cfg: &Config,
) -> Result<Vec<TaskResult>, PipelineError> {
    match format::peek_kind(path)? {
        ArtifactKind::Results => Ok(format::read_file(path, ArtifactKind::Results)?),
        ArtifactKind::Candidates => {
            let tasks = tasks.ok_or_else(|| {
                PipelineError::Input(format!("{} holds candidates; --tasks is required to profile them", path.display()))
            })?;
            let cands: Vec<CandidateSolution> = format::read_file(path, ArtifactKind::Candidates)?;
            if rt.is_none() {
                *rt = Some(Runtime::new(&cfg.general)?);
            }
            pipeline::evaluate_candidates(rt.as_ref().expect("runtime"), tasks, &cands, &cfg.profile)
        }
        other => Err(FormatError::WrongKind {
            path: path.to_path_buf(),
            expected: "results or candidates".into(),
            found: other.as_str().into(),
        }
        .into()),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { input, out, source_dataset, fields, default_language, eval_set } => {
            if source_dataset.is_some() {
                cfg.ingest.source_dataset = source_dataset;
            }
            for pair in &fields {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| PipelineError::Input(format!("--field expects canonical=source, got {pair}")))?;
                cfg.ingest.schema.insert(k.trim().into(), v.trim().into());
            }
            if default_language.is_some() {
                cfg.ingest.default_language = default_language;
            }
            if eval_set.is_some() {
                cfg.ingest.eval_set = eval_set;
            }
            let (tasks, report) = pipeline::ingest_stage(&cfg.ingest, &input)?;
            format::write_file(&out, ArtifactKind::Tasks, &tasks)?;
            print_json(&report);
        }
        Command::AugmentTests { input, out, provider, n_tests, min_tests, timeout_s } => {
            let settings = &mut cfg.testkit.settings;
            if let Some(n) = n_tests {
                settings.tests_per_task = n;
            }
            if let Some(m) = min_tests {
                settings.min_tests = m;
            }
            if let Some(t) = timeout_s {
                settings.validation_timeout_s = t;
            }
            let section = provider.or_else(|| cfg.testkit.provider.clone());
            let backend = match &section {
                Some(s) => Some(cfg.provider(s)?.connect()?),
                None => None,
            };
            let template = pipeline::load_template(cfg.testkit.template.as_deref(), PromptTemplate::test_synthesis())?;
            let tasks = pipeline::read_tasks(&input)?;
            let rt = Runtime::new(&cfg.general)?;
            let (tasks, report) =
                pipeline::augment_stage(&rt, tasks, backend.as_deref(), &template, &cfg.testkit.settings)?;
            format::write_file(&out, ArtifactKind::Tasks, &tasks)?;
            print_json(&report);
        }
        Command::Generate { input, out, providers, n_candidates } => {
            let sections = if providers.is_empty() { cfg.generation.providers.clone() } else { providers };
            let n = n_candidates.unwrap_or(cfg.generation.n_per_provider);
            let backends = pipeline::connect_all(&cfg, &sections)?;
            let template = pipeline::load_template(cfg.generation.template.as_deref(), PromptTemplate::generation())?;
            let tasks = pipeline::read_tasks(&input)?;
            let rt = Runtime::new(&cfg.general)?;
            let (cands, report) = pipeline::generate_stage(&rt, &tasks, &backends, n, &template)?;
            format::write_file(&out, ArtifactKind::Candidates, &cands)?;
            print_json(&report);
        }
        Command::Profile { input, candidates, out, limits } => {
            apply_profile_flags(&mut cfg, &limits)?;
            let tasks = pipeline::read_tasks(&input)?;
            let cands: Option<Vec<CandidateSolution>> = match &candidates {
                Some(p) => Some(format::read_file(p, ArtifactKind::Candidates)?),
                None => None,
            };
            let rt = Runtime::new(&cfg.general)?;
            let records = pipeline::profile_stage(&rt, &tasks, cands.as_deref(), &cfg.profile)?;
            format::write_file(&out, ArtifactKind::Profiles, &records)?;
            let passed = records.iter().filter(|r| r.runs.iter().all(|p| p.status.as_str() == "passed")).count();
            print_json(&serde_json::json!({
                "records": records.len(),
                "passed": passed,
                "environment_label": rt.exec.environment_label(),
            }));
        }
        Command::Select { input, profiles, out, min_improvement } => {
            if let Some(d) = min_improvement {
                cfg.curate.delta = d;
                cfg.validate()?;
            }
            let tasks = pipeline::read_tasks(&input)?;
            let mut all: Vec<ProfileRecord> = Vec::new();
            for p in &profiles {
                all.extend(format::read_file::<ProfileRecord>(p, ArtifactKind::Profiles)?);
            }
            let env = all
                .iter()
                .flat_map(|r| r.runs.first())
                .map(|p| p.environment_label.clone())
                .next()
                .unwrap_or_default();
            let selected = pipeline::select_stage(&tasks, &all, &cfg.curate, &env);
            format::write_file(&out, ArtifactKind::Selected, &selected)?;
            print_json(&serde_json::json!({
                "tasks": selected.len(),
                "kept": selected.iter().filter(|s| s.record.is_some()).count(),
                "dropped": pipeline::drop_counts(&selected),
            }));
        }
        Command::Emit { input, out, format: fmt } => {
            let selected: Vec<SelectionRecord> = format::read_file(&input, ArtifactKind::Selected)?;
            let (_, summary) = pipeline::emit_stage(&selected, &out)?;
            print_summary(&summary, fmt);
        }
        Command::Evaluate {
            tasks,
            baseline,
            candidate,
            baseline_label,
            candidate_label,
            aggregation,
            format: fmt,
            runs,
            out_dir,
            limits,
        } => {
            apply_profile_flags(&mut cfg, &limits)?;
            let tasks = tasks.as_deref().map(pipeline::read_tasks).transpose()?;
            let mut rt = None;
            let base = read_results_or_candidates(&baseline, tasks.as_deref(), &mut rt, &cfg)?;
            let cand = read_results_or_candidates(&candidate, tasks.as_deref(), &mut rt, &cfg)?;
            if let Some(dir) = &out_dir {
                format::write_file(&dir.join(format!("{baseline_label}.results.jsonl")), ArtifactKind::Results, &base)?;
                format::write_file(&dir.join(format!("{candidate_label}.results.jsonl")), ArtifactKind::Results, &cand)?;
            }
            let set = aggregation.unwrap_or(cfg.report.aggregation);
            let table = report::paired_table(&baseline_label, &base, &candidate_label, &cand, set)?;
            print!("{}", report::render_rows(&[table.baseline.clone(), table.candidate.clone()], fmt));
            if table.excluded_degenerate > 0 {
                eprintln!("note: {} task(s) excluded for unusable canonical measurements", table.excluded_degenerate);
            }
            if let Some(n) = runs {
                let tasks = tasks.as_deref().ok_or_else(|| PipelineError::Input("--runs requires --tasks".into()))?;
                let cands: Vec<CandidateSolution> = format::read_file(&candidate, ArtifactKind::Candidates)?;
                if rt.is_none() {
                    rt = Some(Runtime::new(&cfg.general)?);
                }
                let rt = rt.as_ref().expect("runtime");
                let summary = report::robustness(n, |_| {
                    let results = pipeline::evaluate_candidates(rt, tasks, &cands, &cfg.profile)?;
                    pipeline::own_aggregate(&results)
                })?;
                println!();
                print!("{}", summary.render(fmt));
            }
        }
        Command::Report { input, format: fmt, label } => match format::peek_kind(&input)? {
            ArtifactKind::Dataset => {
                let records = curate::parse_dataset(&input)?;
                print_summary(&DatasetSummary::from_records(&records), fmt);
                let pairs: Vec<_> = records.iter().map(|r| (r.initial_metrics, r.chosen_metrics)).collect();
                let dist = report::distribution_summary(&pairs)?;
                println!();
                print!("{}", dist.render(fmt));
            }
            ArtifactKind::Results => {
                let results: Vec<TaskResult> = format::read_file(&input, ArtifactKind::Results)?;
                print!("{}", report::render_rows(&[report::single_row(&label, &results)?], fmt));
            }
            ArtifactKind::Selected => {
                let selected: Vec<SelectionRecord> = format::read_file(&input, ArtifactKind::Selected)?;
                print_json(&serde_json::json!({
                    "tasks": selected.len(),
                    "kept": selected.iter().filter(|s| s.record.is_some()).count(),
                    "dropped": pipeline::drop_counts(&selected),
                }));
            }
            other => {
                return Err(PipelineError::Input(format!(
                    "cannot report on a {} file; expected dataset, results or selected",
                    other.as_str()
                )))
            }
        },
        Command::Calibrate { runs } => {
            if runs == 0 {
                return Err(PipelineError::Input("--runs must be >= 1".into()));
            }
            let rt = Runtime::new(&cfg.general)?;
            print_json(&pipeline::calibrate(&rt, runs)?);
        }
    }
    Ok(())
}

fn print_summary(summary: &DatasetSummary, fmt: OutputFormat) {
    match fmt {
        OutputFormat::Csv => print!("{}", summary.render_csv()),
        OutputFormat::Table => print!("{}", summary.render_markdown()),
        OutputFormat::Text => print!("{}", summary.render_table()),
    }
}
