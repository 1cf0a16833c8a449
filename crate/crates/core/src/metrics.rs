//! Efficiency metrics over execution profiles.
//!
//! Per solution: execution time (ET, seconds), peak memory (MU, MB) and the
//! time integral of resident memory (TMU, MB·s, trapezoidal rule). Each has a
//! normalized form relative to a canonical solution of the same task
//! (NET, NMU, NTMU). Aggregates are arithmetic means over tasks.

use crate::exec::{ExecStatus, ExecutionProfile, MemorySample};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("metrics are undefined for a run with status {0}")]
    NotPassed(&'static str),
    #[error("profile has no memory samples")]
    NoSamples,
    #[error("canonical {0} is not positive")]
    DegenerateCanonical(&'static str),
    #[error("cannot aggregate an empty {0}")]
    Empty(&'static str),
    #[error("correlation is undefined when a series has zero variance")]
    ZeroVariance,
    #[error("series lengths differ ({0} vs {1}) or are shorter than 2")]
    BadLengths(usize, usize),
    #[error("task {0} appears more than once")]
    DuplicateTask(String),
    #[error("total must be positive and cover both sets")]
    InvalidTotal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMetrics {
    pub et_s: f64,
    pub mu_mb: f64,
    pub tmu_mbs: f64,
}

impl EfficiencyMetrics {
    /// Lexicographic selection key: time first, then memory integral, then peak.
    pub fn selection_key(&self) -> (f64, f64, f64) {
        (self.et_s, self.tmu_mbs, self.mu_mb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub net: f64,
    pub nmu: f64,
    pub ntmu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n_tasks: usize,
    pub mean_et: f64,
    pub mean_net: f64,
    pub mean_mu: f64,
    pub mean_nmu: f64,
    pub mean_tmu: f64,
    pub mean_ntmu: f64,
}

/// Trapezoidal area under a polyline given as (t, value) points sorted by t.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Memory integral of a sampled run, holding the last reading until exit.
pub fn tmu_from_samples(samples: &[MemorySample], wall_time_s: f64) -> f64 {
    let mut points: Vec<(f64, f64)> = samples.iter().map(|s| (s.t, s.rss)).collect();
    if let Some(&(t, rss)) = points.last() {
        if t < wall_time_s {
            points.push((wall_time_s, rss));
        }
    }
    trapezoid(&points)
}

pub fn profile_metrics(profile: &ExecutionProfile) -> Result<EfficiencyMetrics, MetricsError> {
    if profile.status != ExecStatus::Passed {
        return Err(MetricsError::NotPassed(profile.status.as_str()));
    }
    if profile.samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    Ok(EfficiencyMetrics {
        et_s: profile.wall_time_s,
        mu_mb: profile.peak_mb,
        tmu_mbs: tmu_from_samples(&profile.samples, profile.wall_time_s),
    })
}

/// Field-wise arithmetic mean over repeated runs of one solution.
pub fn mean_of_runs(runs: &[EfficiencyMetrics]) -> Result<EfficiencyMetrics, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty("run list"));
    }
    let n = runs.len() as f64;
    Ok(EfficiencyMetrics {
        et_s: runs.iter().map(|m| m.et_s).sum::<f64>() / n,
        mu_mb: runs.iter().map(|m| m.mu_mb).sum::<f64>() / n,
        tmu_mbs: runs.iter().map(|m| m.tmu_mbs).sum::<f64>() / n,
    })
}

/// Metrics of a solution measured several times; every run must have passed.
pub fn repeated_profile_metrics(profiles: &[ExecutionProfile]) -> Result<EfficiencyMetrics, MetricsError> {
    let per_run = profiles
        .iter()
        .map(profile_metrics)
        .collect::<Result<Vec<_>, _>>()?;
    mean_of_runs(&per_run)
}

pub fn normalize(code: &EfficiencyMetrics, canonical: &EfficiencyMetrics) -> Result<NormalizedMetrics, MetricsError> {
    for (name, v) in [
        ("et", canonical.et_s),
        ("mu", canonical.mu_mb),
        ("tmu", canonical.tmu_mbs),
    ] {
        if v.is_nan() || v <= 0.0 {
            return Err(MetricsError::DegenerateCanonical(name));
        }
    }
    Ok(NormalizedMetrics {
        net: code.et_s / canonical.et_s,
        nmu: code.mu_mb / canonical.mu_mb,
        ntmu: code.tmu_mbs / canonical.tmu_mbs,
    })
}

pub fn aggregate(per_task: &[(EfficiencyMetrics, NormalizedMetrics)]) -> Result<AggregateMetrics, MetricsError> {
    if per_task.is_empty() {
        return Err(MetricsError::Empty("task list"));
    }
    let n = per_task.len() as f64;
    let mean = |f: &dyn Fn(&(EfficiencyMetrics, NormalizedMetrics)) -> f64| {
        per_task.iter().map(f).sum::<f64>() / n
    };
    Ok(AggregateMetrics {
        n_tasks: per_task.len(),
        mean_et: mean(&|p| p.0.et_s),
        mean_net: mean(&|p| p.1.net),
        mean_mu: mean(&|p| p.0.mu_mb),
        mean_nmu: mean(&|p| p.1.nmu),
        mean_tmu: mean(&|p| p.0.tmu_mbs),
        mean_ntmu: mean(&|p| p.1.ntmu),
    })
}

/// Percentage of tasks whose single solution passed.
pub fn pass_at_1(results: &[(String, ExecStatus)]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty("result list"));
    }
    let mut seen = HashSet::new();
    for (id, _) in results {
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateTask(id.clone()));
        }
    }
    let passed = results.iter().filter(|(_, s)| *s == ExecStatus::Passed).count();
    Ok(100.0 * passed as f64 / results.len() as f64)
}

/// Percentage of all `total` tasks solved by both systems.
pub fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>, total: usize) -> Result<f64, MetricsError> {
    if total == 0 || total < a.union(b).count() {
        return Err(MetricsError::InvalidTotal);
    }
    Ok(100.0 * a.intersection(b).count() as f64 / total as f64)
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(MetricsError::BadLengths(xs.len(), ys.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Standard deviation with n-1 in the denominator.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Standard deviation with n in the denominator.
pub fn population_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(samples: &[(f64, f64)], wall: f64, peak: f64) -> ExecutionProfile {
        ExecutionProfile {
            status: ExecStatus::Passed,
            exit_code: Some(0),
            wall_time_s: wall,
            samples: samples.iter().map(|&p| p.into()).collect(),
            peak_mb: peak,
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            environment_label: "test".into(),
        }
    }

    #[test]
    fn tmu_spot_values() {
        let m = profile_metrics(&profile(&[(0.0, 10.0), (1.0, 10.0)], 1.0, 10.0)).unwrap();
        assert_eq!(m.tmu_mbs, 10.0);
        let m = profile_metrics(&profile(&[(0.0, 0.0), (1.0, 2.0)], 1.0, 2.0)).unwrap();
        assert_eq!(m.tmu_mbs, 1.0);
        let m = profile_metrics(&profile(&[(0.0, 1.0), (0.5, 3.0), (1.0, 2.0)], 1.0, 3.0)).unwrap();
        assert_eq!(m.tmu_mbs, 2.25);
    }

    #[test]
    fn last_sample_is_held_until_exit() {
        // (0,4)->(1,4) plus hold at 4 until 3 s
        let m = profile_metrics(&profile(&[(0.0, 4.0), (1.0, 4.0)], 3.0, 4.0)).unwrap();
        assert_eq!(m.tmu_mbs, 12.0);
        assert_eq!(m.et_s, 3.0);
        assert_eq!(m.mu_mb, 4.0);
    }

    #[test]
    fn non_passed_or_empty_profiles_have_no_metrics() {
        let mut p = profile(&[(0.0, 1.0)], 1.0, 1.0);
        p.status = ExecStatus::Timeout;
        assert_eq!(profile_metrics(&p), Err(MetricsError::NotPassed("timeout")));
        assert_eq!(profile_metrics(&profile(&[], 1.0, 1.0)), Err(MetricsError::NoSamples));
    }

    #[test]
    fn normalize_examples() {
        let x = EfficiencyMetrics { et_s: 0.3, mu_mb: 20.0, tmu_mbs: 5.0 };
        assert_eq!(normalize(&x, &x).unwrap(), NormalizedMetrics { net: 1.0, nmu: 1.0, ntmu: 1.0 });
        let double = EfficiencyMetrics { et_s: 0.6, mu_mb: 40.0, tmu_mbs: 10.0 };
        assert_eq!(normalize(&double, &x).unwrap(), NormalizedMetrics { net: 2.0, nmu: 2.0, ntmu: 2.0 });
        let code = EfficiencyMetrics { et_s: 0.16, ..x };
        let canon = EfficiencyMetrics { et_s: 0.31, ..x };
        assert!((normalize(&code, &canon).unwrap().net - 0.516).abs() < 5e-4);
        let zero = EfficiencyMetrics { tmu_mbs: 0.0, ..x };
        assert_eq!(normalize(&x, &zero), Err(MetricsError::DegenerateCanonical("tmu")));
    }

    #[test]
    fn aggregate_examples() {
        let e = |et| EfficiencyMetrics { et_s: et, mu_mb: 1.0, tmu_mbs: 1.0 };
        let n = NormalizedMetrics { net: 1.0, nmu: 1.0, ntmu: 1.0 };
        let one = aggregate(&[(e(0.1), n)]).unwrap();
        assert_eq!(one.mean_et, 0.1);
        assert_eq!(one.n_tasks, 1);
        let two = aggregate(&[(e(0.1), n), (e(0.3), n)]).unwrap();
        assert!((two.mean_et - 0.2).abs() < 1e-15);
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty("task list")));
    }

    #[test]
    fn pass_at_1_examples() {
        let r = |n: usize, passed: usize| -> Vec<(String, ExecStatus)> {
            (0..n)
                .map(|i| {
                    let s = if i < passed { ExecStatus::Passed } else { ExecStatus::FailedAssertion };
                    (format!("t{i}"), s)
                })
                .collect()
        };
        assert_eq!(pass_at_1(&r(4, 2)).unwrap(), 50.0);
        assert_eq!(pass_at_1(&r(3, 3)).unwrap(), 100.0);
        assert_eq!(pass_at_1(&r(1000, 448)).unwrap(), 44.8);
        assert_eq!(pass_at_1(&r(1000, 577)).unwrap(), 57.7);
        assert!(pass_at_1(&[]).is_err());
        let dup = vec![("a".to_string(), ExecStatus::Passed), ("a".to_string(), ExecStatus::Passed)];
        assert!(matches!(pass_at_1(&dup), Err(MetricsError::DuplicateTask(_))));
    }

    #[test]
    fn overlap_examples() {
        let set = |ids: &[u32]| ids.iter().map(|i| i.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(overlap(&set(&[1, 2]), &set(&[2, 3]), 10).unwrap(), 10.0);
        let same: Vec<u32> = (0..37).collect();
        assert_eq!(overlap(&set(&same), &set(&same), 100).unwrap(), 37.0);
        assert_eq!(overlap(&set(&[1]), &set(&[2]), 5).unwrap(), 0.0);
        assert_eq!(overlap(&set(&[1]), &set(&[2]), 0), Err(MetricsError::InvalidTotal));
        assert_eq!(overlap(&set(&[1, 2]), &set(&[3]), 2), Err(MetricsError::InvalidTotal));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &lin).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&xs, &[1.0; 5]), Err(MetricsError::ZeroVariance));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn std_flavors() {
        let xs = [1.30, 1.31, 1.30, 1.30, 1.30];
        assert!((mean(&xs).unwrap() - 1.302).abs() < 1e-12);
        assert!((sample_std(&xs).unwrap() - 0.004472135955).abs() < 1e-9);
        assert!((population_std(&xs).unwrap() - 0.004).abs() < 1e-9);
        assert_eq!(sample_std(&[0.17; 5]), Some(0.0));
        assert_eq!(sample_std(&[1.0]), None);
    }
}
