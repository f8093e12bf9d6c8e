//! Empirical checks that normalized paths look like Brownian motion.
//!
//! Increments of the time-changed paths are tested for normality (KS),
//! variance and lag-1 correlation; event frequencies are compared with their
//! Wiener values; and witness strategies certify upper bounds on the outer
//! content of events. Equality of outer content and Wiener measure is not
//! computable: the distribution tests cover the lower side and the witnesses
//! the upper side, event by event.

use crate::error::{Error, Result};
use crate::paths::SampledPath;
use crate::special::norm_cdf;
use crate::strategies::CapitalTrajectory;
use crate::timechange::{normalize_path, TimeChangedPath};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Terms of the Kolmogorov series.
pub const KOLMOGOROV_TERMS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub level: f64,
    pub reject: bool,
}

/// `P(K > lambda)` for the Kolmogorov distribution.
///
/// The alternating series is used from `lambda >= 0.3`; below that it has not
/// converged after 100 terms and the theta-function form is used instead.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let p = if lambda >= 0.3 {
        let mut s = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
        }
        2.0 * s
    } else {
        let c = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let mut s = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let odd = (2 * k - 1) as f64;
            s += (-odd * odd * std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda)).exp();
        }
        1.0 - c * s
    };
    p.clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov test of `samples` against the standard normal at `level`.
pub fn ks_normal_at(samples: &[f64], level: f64) -> Result<TestResult> {
    if samples.len() < 8 {
        return Err(Error::domain(format!("KS needs at least 8 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("KS samples must be finite"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = norm_cdf(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let p = kolmogorov_survival(n.sqrt() * d);
    Ok(TestResult { statistic: d, p_value: p, n: xs.len(), level, reject: p < level })
}

/// [`ks_normal_at`] at the 1% level.
pub fn ks_normal(samples: &[f64]) -> Result<TestResult> {
    ks_normal_at(samples, 0.01)
}

fn stride(tc: &TimeChangedPath, ds: f64) -> Result<usize> {
    let k = (ds / tc.ds).round();
    if !(k >= 1.0) || (k * tc.ds - ds).abs() > 1e-9 * ds {
        return Err(Error::domain(format!("ds={ds} is not a multiple of the grid step {}", tc.ds)));
    }
    Ok(k as usize)
}

/// Standardized non-overlapping increments of one path.
pub fn path_increments(tc: &TimeChangedPath, ds: f64) -> Result<Vec<f64>> {
    let k = stride(tc, ds)?;
    let scale = 1.0 / ds.sqrt();
    Ok(tc.values.iter().step_by(k).collect::<Vec<_>>().windows(2).map(|w| (w[1] - w[0]) * scale).collect())
}

/// Pooled `(tc(s + ds) - tc(s)) / sqrt(ds)` over non-overlapping windows.
pub fn standardized_increments(ensemble: &[TimeChangedPath], ds: f64) -> Result<Vec<f64>> {
    let mut pool = Vec::new();
    for tc in ensemble {
        pool.extend(path_increments(tc, ds)?);
    }
    if pool.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(pool)
}

/// Normalize every path with [`normalize_path`].
pub fn normalize_ensemble(paths: &[SampledPath], ds: f64, level: Option<u32>) -> Result<Vec<TimeChangedPath>> {
    paths.par_iter().map(|p| normalize_path(p, ds, level)).collect()
}

/// Acceptance thresholds of the emergence suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmergenceThresholds {
    pub variance_low: f64,
    pub variance_high: f64,
    /// Largest tolerated fraction of paths whose own KS test rejects.
    pub max_rejection_rate: f64,
    /// Autocorrelation threshold is `autocorr_factor / sqrt(n)`.
    pub autocorr_factor: f64,
}

impl Default for EmergenceThresholds {
    fn default() -> Self {
        EmergenceThresholds { variance_low: 0.8, variance_high: 1.2, max_rejection_rate: 0.05, autocorr_factor: 3.0 }
    }
}

/// Suite outcome at one increment scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsReport {
    pub ds: f64,
    pub increments: usize,
    pub pooled_ks: TestResult,
    pub variance_ratio: f64,
    pub lag1_autocorrelation: f64,
    pub autocorrelation_threshold: f64,
    pub paths_tested: usize,
    pub paths_rejected: usize,
    pub rejection_rate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergenceReport {
    pub level: f64,
    pub thresholds: EmergenceThresholds,
    pub paths: usize,
    pub per_ds: Vec<DsReport>,
    pub pass: bool,
}

/// KS normality, variance ratio and lag-1 autocorrelation of increments at each `ds`.
pub fn emergence_suite(
    ensemble: &[TimeChangedPath],
    ds_list: &[f64],
    level: f64,
    thresholds: EmergenceThresholds,
) -> Result<EmergenceReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level {level} outside (0, 1)")));
    }
    if ds_list.is_empty() {
        return Err(Error::domain("need at least one ds"));
    }
    let mut per_ds = Vec::with_capacity(ds_list.len());
    for &ds in ds_list {
        let per_path: Vec<Vec<f64>> = ensemble.iter().map(|tc| path_increments(tc, ds)).collect::<Result<_>>()?;
        let pool: Vec<f64> = per_path.iter().flatten().copied().collect();
        if pool.len() < 8 {
            return Err(Error::NoSamples);
        }
        let pooled_ks = ks_normal_at(&pool, level)?;
        let variance_ratio = pool.iter().map(|x| x * x).sum::<f64>() / pool.len() as f64;
        let (mut cross, mut pairs) = (0.0, 0usize);
        for inc in &per_path {
            for w in inc.windows(2) {
                cross += w[0] * w[1];
                pairs += 1;
            }
        }
        let lag1 = if pairs == 0 { 0.0 } else { (cross / pairs as f64) / variance_ratio };
        let autocorrelation_threshold = thresholds.autocorr_factor / (pairs.max(1) as f64).sqrt();
        let verdicts: Vec<bool> = per_path
            .par_iter()
            .filter(|inc| inc.len() >= 8)
            .map(|inc| ks_normal_at(inc, level).map(|r| r.reject))
            .collect::<Result<_>>()?;
        let paths_tested = verdicts.len();
        let paths_rejected = verdicts.iter().filter(|r| **r).count();
        let rejection_rate = if paths_tested == 0 { 1.0 } else { paths_rejected as f64 / paths_tested as f64 };
        let pass = (thresholds.variance_low..=thresholds.variance_high).contains(&variance_ratio)
            && rejection_rate <= thresholds.max_rejection_rate
            && lag1.abs() <= autocorrelation_threshold;
        per_ds.push(DsReport {
            ds,
            increments: pool.len(),
            pooled_ks,
            variance_ratio,
            lag1_autocorrelation: lag1,
            autocorrelation_threshold,
            paths_tested,
            paths_rejected,
            rejection_rate,
            pass,
        });
    }
    let pass = per_ds.iter().all(|r| r.pass);
    Ok(EmergenceReport { level, thresholds, paths: ensemble.len(), per_ds, pass })
}

/// Events decided on a normalized path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum PathEvent {
    /// Reaches `a` before `b`.
    HitsABeforeB { a: f64, b: f64 },
    /// `psi(s) > x`.
    AboveLevelAt { s: f64, x: f64 },
}

impl PathEvent {
    /// `Some(outcome)` when the path's domain decides the event.
    pub fn decide(&self, tc: &TimeChangedPath) -> Option<bool> {
        match *self {
            PathEvent::HitsABeforeB { a, b } => {
                for &v in &tc.values {
                    let hit_a = if a >= b { v >= a } else { v <= a };
                    let hit_b = if a >= b { v <= b } else { v >= b };
                    if hit_a {
                        return Some(true);
                    }
                    if hit_b {
                        return Some(false);
                    }
                }
                None
            }
            PathEvent::AboveLevelAt { s, x } => {
                if tc.domain_end() + 1e-12 < s {
                    None
                } else {
                    Some(tc.at(s) > x)
                }
            }
        }
    }

    /// Probability of the event under Brownian motion started at `c`.
    pub fn wiener_probability(&self, c: f64) -> Result<f64> {
        match *self {
            PathEvent::HitsABeforeB { a, b } => {
                if a == b {
                    return Err(Error::domain("levels must differ"));
                }
                Ok(((c - b) / (a - b)).clamp(0.0, 1.0))
            }
            PathEvent::AboveLevelAt { s, x } => {
                if !(s > 0.0) {
                    return Err(Error::domain("time must be positive"));
                }
                Ok(1.0 - norm_cdf((x - c) / s.sqrt()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFrequency {
    pub frequency: f64,
    pub wiener: f64,
    pub decided: usize,
    pub undecided: usize,
    /// Binomial standard error of `frequency`.
    pub std_error: f64,
}

/// Frequency of `event` over the decided members of the ensemble.
pub fn event_frequency(ensemble: &[TimeChangedPath], event: PathEvent, c: f64) -> Result<EventFrequency> {
    let wiener = event.wiener_probability(c)?;
    let outcomes: Vec<Option<bool>> = ensemble.iter().map(|tc| event.decide(tc)).collect();
    let decided = outcomes.iter().filter(|o| o.is_some()).count();
    if decided == 0 {
        return Err(Error::domain("event undecided on every path"));
    }
    let hits = outcomes.iter().filter(|o| **o == Some(true)).count();
    let frequency = hits as f64 / decided as f64;
    Ok(EventFrequency {
        frequency,
        wiener,
        decided,
        undecided: ensemble.len() - decided,
        std_error: (frequency * (1.0 - frequency) / decided as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessCertificate {
    /// Upper bound certified for the outer content of the event.
    pub certificate: f64,
    pub event_paths: usize,
    /// Smallest running maximum of capital over the event paths.
    pub min_running_max: f64,
}

/// Certify that a strategy started from `c0` reaches capital 1 on every
/// member of `ensemble` in the event.
///
/// `run(i, path)` returns the capital trajectory of the strategy, which must
/// stay nonnegative. The certificate is `c0`, or 0 when no member is in the event.
pub fn witness_upper_content<R, E>(
    ensemble: &[SampledPath],
    c0: f64,
    run: R,
    in_event: E,
) -> Result<WitnessCertificate>
where
    R: Fn(usize, &SampledPath) -> Result<CapitalTrajectory> + Sync,
    E: Fn(usize, &SampledPath) -> bool + Sync,
{
    if !(c0 >= 0.0) {
        return Err(Error::domain("initial capital must be nonnegative"));
    }
    let results: Vec<Option<(usize, f64)>> = ensemble
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if !in_event(i, p) {
                return Ok(None);
            }
            let traj = run(i, p)?;
            if traj.running_min < 0.0 {
                return Err(Error::StrategyFault(format!("capital went negative on path {i}")));
            }
            Ok(Some((i, traj.running_max)))
        })
        .collect::<Result<_>>()?;
    let hits: Vec<(usize, f64)> = results.into_iter().flatten().collect();
    if hits.is_empty() {
        return Ok(WitnessCertificate { certificate: 0.0, event_paths: 0, min_running_max: f64::INFINITY });
    }
    let (worst_id, worst) = hits.iter().copied().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    if worst < 1.0 {
        return Err(Error::WitnessFailed { path_id: worst_id, max_capital: worst });
    }
    Ok(WitnessCertificate { certificate: c0, event_paths: hits.len(), min_running_max: worst })
}
