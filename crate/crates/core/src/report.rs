//! Evaluation tables, robustness statistics and distribution summaries.
//!
//! Rendered numbers use round-half-even on the shortest decimal form of the
//! value: metric values to 2 places, percentages to 1 place. Reductions are
//! `100·(baseline − value)/baseline`, so an improvement is positive.

use crate::exec::ExecStatus;
use crate::metrics::{self, AggregateMetrics, EfficiencyMetrics, MetricsError, NormalizedMetrics};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const VALUE_DECIMALS: usize = 2;
pub const PERCENT_DECIMALS: usize = 1;
pub const METRIC_NAMES: [&str; 6] = ["ET", "NET", "MU", "NMU", "TMU", "NTMU"];
pub const CSV_COLUMNS: [&str; 15] = [
    "label", "ET", "NET", "MU", "NMU", "TMU", "NTMU", "Overlap", "Pass@1", "ET_red_pct", "NET_red_pct",
    "MU_red_pct", "NMU_red_pct", "TMU_red_pct", "NTMU_red_pct",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no task is solved by both systems; rerun with aggregation set `own` to aggregate each side over its own correct tasks")]
    EmptyOverlap,
    #[error("{0} has no correct task with a usable canonical measurement")]
    EmptySet(String),
    #[error("result sets cover different tasks: {0}")]
    UniverseMismatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("at least 2 runs are required, got {0}")]
    TooFewRuns(usize),
    #[error("run {run} of {n_runs} failed after {completed} completed runs: {message}")]
    RunFailed { run: usize, n_runs: usize, completed: usize, message: String },
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// One task's outcome for one system, with the canonical measurement used for normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub status: ExecStatus,
    #[serde(default)]
    pub metrics: Option<EfficiencyMetrics>,
    #[serde(default)]
    pub canonical: Option<EfficiencyMetrics>,
}

impl TaskResult {
    fn usable(&self) -> Option<(EfficiencyMetrics, NormalizedMetrics)> {
        if self.status != ExecStatus::Passed {
            return None;
        }
        let m = self.metrics?;
        let n = metrics::normalize(&m, self.canonical.as_ref()?).ok()?;
        Some((m, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationSet {
    #[default]
    Overlap,
    #[serde(alias = "own")]
    OwnCorrect,
}

impl std::str::FromStr for AggregationSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "overlap" => Ok(AggregationSet::Overlap),
            "own" | "own_correct" => Ok(AggregationSet::OwnCorrect),
            other => Err(format!("unknown aggregation set `{other}` (expected overlap or own)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub et: f64,
    pub net: f64,
    pub mu: f64,
    pub nmu: f64,
    pub tmu: f64,
    pub ntmu: f64,
}

impl Reductions {
    pub fn as_array(&self) -> [f64; 6] {
        [self.et, self.net, self.mu, self.nmu, self.tmu, self.ntmu]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub label: String,
    pub et: f64,
    pub net: f64,
    pub mu: f64,
    pub nmu: f64,
    pub tmu: f64,
    pub ntmu: f64,
    pub overlap_pct: f64,
    pub pass1_pct: f64,
    pub reductions: Option<Reductions>,
}

pub fn reduction_pct(baseline: f64, value: f64) -> f64 {
    100.0 * (baseline - value) / baseline
}

impl EvaluationRow {
    pub fn from_aggregate(label: &str, agg: &AggregateMetrics, overlap_pct: f64, pass1_pct: f64) -> Self {
        EvaluationRow {
            label: label.to_string(),
            et: agg.mean_et,
            net: agg.mean_net,
            mu: agg.mean_mu,
            nmu: agg.mean_nmu,
            tmu: agg.mean_tmu,
            ntmu: agg.mean_ntmu,
            overlap_pct,
            pass1_pct,
            reductions: None,
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.et, self.net, self.mu, self.nmu, self.tmu, self.ntmu]
    }

    pub fn with_reductions(mut self, baseline: &EvaluationRow) -> Self {
        let r = |b: f64, v: f64| reduction_pct(b, v);
        self.reductions = Some(Reductions {
            et: r(baseline.et, self.et),
            net: r(baseline.net, self.net),
            mu: r(baseline.mu, self.mu),
            nmu: r(baseline.nmu, self.nmu),
            tmu: r(baseline.tmu, self.tmu),
            ntmu: r(baseline.ntmu, self.ntmu),
        });
        self
    }

    /// Cell text for metric `i` in METRIC_NAMES order, e.g. `0.16 (48.4%)`.
    pub fn cell(&self, i: usize) -> String {
        let v = round_half_even(self.values()[i], VALUE_DECIMALS);
        match &self.reductions {
            Some(r) => format!("{v} ({}%)", round_half_even(r.as_array()[i], PERCENT_DECIMALS)),
            None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTable {
    pub baseline: EvaluationRow,
    pub candidate: EvaluationRow,
    pub aggregation_set: AggregationSet,
    pub n_tasks: usize,
    /// Correct tasks left out because their canonical measurement was unusable.
    pub excluded_degenerate: usize,
}

fn index(results: &[TaskResult]) -> Result<BTreeMap<&str, &TaskResult>, ReportError> {
    let mut map = BTreeMap::new();
    for r in results {
        if map.insert(r.task_id.as_str(), r).is_some() {
            return Err(MetricsError::DuplicateTask(r.task_id.clone()).into());
        }
    }
    Ok(map)
}

fn passed_ids(map: &BTreeMap<&str, &TaskResult>) -> BTreeSet<String> {
    map.values()
        .filter(|r| r.status == ExecStatus::Passed)
        .map(|r| r.task_id.clone())
        .collect()
}

fn status_pairs(results: &[TaskResult]) -> Vec<(String, ExecStatus)> {
    results.iter().map(|r| (r.task_id.clone(), r.status)).collect()
}

fn aggregate_over(
    map: &BTreeMap<&str, &TaskResult>,
    ids: &BTreeSet<String>,
) -> (Vec<(EfficiencyMetrics, NormalizedMetrics)>, usize) {
    let mut rows = Vec::new();
    let mut degenerate = 0;
    for id in ids {
        match map.get(id.as_str()).and_then(|r| r.usable()) {
            Some(p) => rows.push(p),
            None => degenerate += 1,
        }
    }
    (rows, degenerate)
}

/// Builds the baseline and candidate rows of a paired comparison.
pub fn paired_table(
    baseline_label: &str,
    baseline: &[TaskResult],
    candidate_label: &str,
    candidate: &[TaskResult],
    set: AggregationSet,
) -> Result<PairedTable, ReportError> {
    let b = index(baseline)?;
    let c = index(candidate)?;
    if !b.keys().eq(c.keys()) {
        let only_b: Vec<_> = b.keys().filter(|k| !c.contains_key(*k)).take(3).collect();
        let only_c: Vec<_> = c.keys().filter(|k| !b.contains_key(*k)).take(3).collect();
        return Err(ReportError::UniverseMismatch(format!(
            "baseline-only {only_b:?}, candidate-only {only_c:?}"
        )));
    }
    let total = b.len();
    let (pb, pc) = (passed_ids(&b), passed_ids(&c));
    let overlap_pct = metrics::overlap(&pb, &pc, total)?;
    let both: BTreeSet<String> = pb.intersection(&pc).cloned().collect();
    let (set_b, set_c) = match set {
        AggregationSet::Overlap => {
            if both.is_empty() {
                return Err(ReportError::EmptyOverlap);
            }
            (both.clone(), both)
        }
        AggregationSet::OwnCorrect => (pb, pc),
    };
    let (mut rows_b, mut deg_b) = aggregate_over(&b, &set_b);
    let (mut rows_c, mut deg_c) = aggregate_over(&c, &set_c);
    if set == AggregationSet::Overlap {
        // keep both sides on the same tasks
        let ok: BTreeSet<&String> = set_b
            .iter()
            .filter(|id| b[id.as_str()].usable().is_some() && c[id.as_str()].usable().is_some())
            .collect();
        rows_b = ok.iter().filter_map(|id| b[id.as_str()].usable()).collect();
        rows_c = ok.iter().filter_map(|id| c[id.as_str()].usable()).collect();
        deg_b = set_b.len() - ok.len();
        deg_c = 0;
    }
    if rows_b.is_empty() {
        return Err(ReportError::EmptySet(baseline_label.to_string()));
    }
    if rows_c.is_empty() {
        return Err(ReportError::EmptySet(candidate_label.to_string()));
    }
    let agg_b = metrics::aggregate(&rows_b)?;
    let agg_c = metrics::aggregate(&rows_c)?;
    let base_row = EvaluationRow::from_aggregate(
        baseline_label,
        &agg_b,
        overlap_pct,
        metrics::pass_at_1(&status_pairs(baseline))?,
    );
    let cand_row = EvaluationRow::from_aggregate(
        candidate_label,
        &agg_c,
        overlap_pct,
        metrics::pass_at_1(&status_pairs(candidate))?,
    )
    .with_reductions(&base_row);
    Ok(PairedTable {
        baseline: base_row,
        candidate: cand_row,
        aggregation_set: set,
        n_tasks: total,
        excluded_degenerate: deg_b + deg_c,
    })
}

/// Row for a single system over its own correct tasks. Overlap equals pass@1 here.
pub fn single_row(label: &str, results: &[TaskResult]) -> Result<EvaluationRow, ReportError> {
    let map = index(results)?;
    let (rows, _) = aggregate_over(&map, &passed_ids(&map));
    if rows.is_empty() {
        return Err(ReportError::EmptySet(label.to_string()));
    }
    let pass1 = metrics::pass_at_1(&status_pairs(results))?;
    Ok(EvaluationRow::from_aggregate(label, &metrics::aggregate(&rows)?, pass1, pass1))
}

/// Rounds the shortest decimal representation of `x` to `decimals` places, ties to even.
/// The sign of negative inputs is kept even when the result is zero.
pub fn round_half_even(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    let int_len = int_part.len();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    let keep = int_len + decimals;
    if frac.len() > decimals {
        let first = frac[decimals];
        let rest_nonzero = frac[decimals + 1..].iter().any(|&d| d != 0);
        digits.truncate(keep);
        let last_odd = digits.last().is_some_and(|d| d % 2 == 1);
        if first > 5 || (first == 5 && (rest_nonzero || last_odd)) {
            let mut i = digits.len();
            loop {
                if i == 0 {
                    digits.insert(0, 1);
                    break;
                }
                i -= 1;
                if digits[i] == 9 {
                    digits[i] = 0;
                } else {
                    digits[i] += 1;
                    break;
                }
            }
        }
    } else {
        digits.resize(keep, 0);
    }
    let split = digits.len() - decimals;
    let to_str = |ds: &[u8]| ds.iter().map(|d| char::from(b'0' + d)).collect::<String>();
    let mut out = String::new();
    if x.is_sign_negative() {
        out.push('-');
    }
    out.push_str(&to_str(&digits[..split]));
    if decimals > 0 {
        out.push('.');
        out.push_str(&to_str(&digits[split..]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    /// Markdown table.
    Table,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "table" | "markdown" | "md" => Ok(OutputFormat::Table),
            other => Err(format!("unknown format `{other}` (expected text, csv or table)")),
        }
    }
}

fn display_cells(row: &EvaluationRow) -> Vec<String> {
    let mut cells = vec![row.label.clone()];
    cells.extend((0..6).map(|i| row.cell(i)));
    cells.push(round_half_even(row.overlap_pct, PERCENT_DECIMALS));
    cells.push(round_half_even(row.pass1_pct, PERCENT_DECIMALS));
    cells
}

const DISPLAY_HEADER: [&str; 9] = ["Model", "ET (s)", "NET", "MU (MB)", "NMU", "TMU (MB*s)", "NTMU", "Overlap (%)", "Pass@1 (%)"];

fn render_grid(header: &[&str], rows: &[Vec<String>], format: OutputFormat) -> String {
    let mut out = String::new();
    match format {
        OutputFormat::Table => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", header.iter().map(|_| "---|").collect::<String>());
            for r in rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
        }
        _ => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for r in rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cells: Vec<&str>| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let _ = writeln!(out, "{}", line(header.to_vec()));
            for r in rows {
                let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
            }
        }
    }
    out
}

/// Renders evaluation rows. Reduction percentages appear in brackets in text
/// and table output and as `*_red_pct` columns in CSV.
pub fn render_rows(rows: &[EvaluationRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => rows_to_csv(rows),
        _ => render_grid(&DISPLAY_HEADER, &rows.iter().map(display_cells).collect::<Vec<_>>(), format),
    }
}

pub fn rows_to_csv(rows: &[EvaluationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for row in rows {
        let mut rec = vec![row.label.clone()];
        rec.extend(row.values().iter().map(|v| round_half_even(*v, VALUE_DECIMALS)));
        rec.push(round_half_even(row.overlap_pct, PERCENT_DECIMALS));
        rec.push(round_half_even(row.pass1_pct, PERCENT_DECIMALS));
        match &row.reductions {
            Some(r) => rec.extend(r.as_array().iter().map(|v| round_half_even(*v, PERCENT_DECIMALS))),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Parses CSV produced by `rows_to_csv`. Values carry the rendered precision.
pub fn parse_csv(text: &str) -> Result<Vec<EvaluationRow>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| ReportError::Malformed(e.to_string()))?;
    if !headers.iter().eq(CSV_COLUMNS) {
        return Err(ReportError::Malformed(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ReportError::Malformed(e.to_string()))?;
        let num = |i: usize| -> Result<f64, ReportError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| ReportError::Malformed(format!("column {} is not a number: {:?}", CSV_COLUMNS[i], &rec[i])))
        };
        let reductions = if rec[9].is_empty() {
            None
        } else {
            Some(Reductions {
                et: num(9)?,
                net: num(10)?,
                mu: num(11)?,
                nmu: num(12)?,
                tmu: num(13)?,
                ntmu: num(14)?,
            })
        };
        rows.push(EvaluationRow {
            label: rec[0].to_string(),
            et: num(1)?,
            net: num(2)?,
            mu: num(3)?,
            nmu: num(4)?,
            tmu: num(5)?,
            ntmu: num(6)?,
            overlap_pct: num(7)?,
            pass1_pct: num(8)?,
            reductions,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub name: String,
    pub mean: f64,
    /// n−1 denominator; this is the reported spread.
    pub std: f64,
    pub population_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub n_runs: usize,
    pub metrics: Vec<MetricStat>,
}

type Getter = fn(&AggregateMetrics) -> f64;

impl RobustnessSummary {
    pub fn get(&self, name: &str) -> Option<&MetricStat> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn from_runs(runs: &[AggregateMetrics]) -> Result<Self, ReportError> {
        if runs.len() < 2 {
            return Err(ReportError::TooFewRuns(runs.len()));
        }
        let columns: [(&str, Getter); 6] = [
            ("ET", |a| a.mean_et),
            ("NET", |a| a.mean_net),
            ("MU", |a| a.mean_mu),
            ("NMU", |a| a.mean_nmu),
            ("TMU", |a| a.mean_tmu),
            ("NTMU", |a| a.mean_ntmu),
        ];
        let metrics = columns
            .iter()
            .map(|(name, f)| {
                let xs: Vec<f64> = runs.iter().map(f).collect();
                MetricStat {
                    name: name.to_string(),
                    mean: metrics::mean(&xs).unwrap_or(0.0),
                    std: metrics::sample_std(&xs).unwrap_or(0.0),
                    population_std: metrics::population_std(&xs).unwrap_or(0.0),
                }
            })
            .collect();
        Ok(RobustnessSummary { n_runs: runs.len(), metrics })
    }

    pub fn render(&self, format: OutputFormat) -> String {
        let header = ["Metric", "Mean", "Std (sample, n-1)", "Std (population)"];
        let rows: Vec<Vec<String>> = self
            .metrics
            .iter()
            .map(|m| {
                vec![
                    m.name.clone(),
                    round_half_even(m.mean, VALUE_DECIMALS),
                    round_half_even(m.std, 3),
                    round_half_even(m.population_std, 3),
                ]
            })
            .collect();
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["metric", "mean", "std_sample", "std_population"]).expect("in-memory write");
                for r in &rows {
                    w.write_record(r).expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
            }
            _ => format!("runs: {}\n{}", self.n_runs, render_grid(&header, &rows, format)),
        }
    }
}

/// Evaluates the same solution set `n_runs` times in sequence and summarizes the spread.
pub fn robustness<F, E>(n_runs: usize, mut runner: F) -> Result<RobustnessSummary, ReportError>
where
    F: FnMut(usize) -> Result<AggregateMetrics, E>,
    E: std::fmt::Display,
{
    if n_runs < 2 {
        return Err(ReportError::TooFewRuns(n_runs));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        match runner(run) {
            Ok(a) => runs.push(a),
            Err(e) => {
                return Err(ReportError::RunFailed {
                    run: run + 1,
                    n_runs,
                    completed: runs.len(),
                    message: e.to_string(),
                })
            }
        }
    }
    RobustnessSummary::from_runs(&runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRatios {
    pub et: Option<f64>,
    pub mu: Option<f64>,
    pub tmu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub initial: EfficiencyMetrics,
    pub efficient: EfficiencyMetrics,
    /// initial mean / efficient mean; absent when the efficient mean is zero.
    pub ratio: MetricRatios,
}

pub fn distribution_summary(pairs: &[(EfficiencyMetrics, EfficiencyMetrics)]) -> Result<DistributionSummary, ReportError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("pair list").into());
    }
    let initial: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let efficient: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let initial = metrics::mean_of_runs(&initial)?;
    let efficient = metrics::mean_of_runs(&efficient)?;
    let ratio = |a: f64, b: f64| (b != 0.0).then(|| a / b);
    Ok(DistributionSummary {
        n: pairs.len(),
        initial,
        efficient,
        ratio: MetricRatios {
            et: ratio(initial.et_s, efficient.et_s),
            mu: ratio(initial.mu_mb, efficient.mu_mb),
            tmu: ratio(initial.tmu_mbs, efficient.tmu_mbs),
        },
    })
}

impl DistributionSummary {
    pub fn render(&self, format: OutputFormat) -> String {
        let r = |x: Option<f64>| x.map_or("-".to_string(), |v| round_half_even(v, VALUE_DECIMALS));
        let v = |x: f64| round_half_even(x, VALUE_DECIMALS);
        let rows = vec![
            vec!["ET (s)".to_string(), v(self.initial.et_s), v(self.efficient.et_s), r(self.ratio.et)],
            vec!["MU (MB)".to_string(), v(self.initial.mu_mb), v(self.efficient.mu_mb), r(self.ratio.mu)],
            vec!["TMU (MB*s)".to_string(), v(self.initial.tmu_mbs), v(self.efficient.tmu_mbs), r(self.ratio.tmu)],
        ];
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["metric", "initial_mean", "efficient_mean", "ratio"]).expect("in-memory write");
                for row in &rows {
                    w.write_record(row).expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
            }
            _ => format!(
                "tasks: {}\n{}",
                self.n,
                render_grid(&["Metric", "Initial mean", "Efficient mean", "Ratio"], &rows, format)
            ),
        }
    }
}
