//! The quadratic-variation clock.
//!
//! `tau_s` is the first query-grid time at which the ladder limit `A` reaches
//! `s`, and the normalized path is `s -> w(tau_s)` on `s in [0, A(horizon)]`.
//! Also here: moduli of continuity of polylines and the empirical checks of
//! the tightness bounds.

use crate::crossings::{normalization_level, qv_limit, QVEstimate};
use crate::error::{Error, Result};
use crate::paths::{fmt_f64, SampledPath};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;

/// `s -> w(tau_s)` on a uniform QV-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeChangedPath {
    pub ds: f64,
    pub s_grid: Vec<f64>,
    pub tau_map: Vec<f64>,
    pub values: Vec<f64>,
    /// `A` at the horizon of the source path.
    pub a_end: f64,
}

impl TimeChangedPath {
    /// Re-grid `path` on `0, ds, 2ds, ...` with `tau_s = s`, skipping the
    /// normalization. Used as a negative control.
    pub fn identity(path: &SampledPath, ds: f64) -> Result<Self> {
        if !(ds > 0.0) {
            return Err(Error::domain("ds must be positive"));
        }
        let end = path.horizon();
        let count = (end / ds).floor() as usize;
        let s_grid: Vec<f64> = (0..=count).map(|k| k as f64 * ds).collect();
        let values = path.eval_sorted(&s_grid);
        Ok(TimeChangedPath { ds, tau_map: s_grid.clone(), s_grid, values, a_end: end })
    }

    pub fn len(&self) -> usize {
        self.s_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_grid.is_empty()
    }

    /// Last grid point of the domain.
    pub fn domain_end(&self) -> f64 {
        *self.s_grid.last().unwrap_or(&0.0)
    }

    /// The normalized path as a polyline in `s`.
    pub fn as_path(&self) -> Result<SampledPath> {
        SampledPath::new(self.s_grid.clone(), self.values.clone())
    }

    /// Value at `s` by linear interpolation on the grid, frozen beyond the domain.
    pub fn at(&self, s: f64) -> f64 {
        let n = self.s_grid.len();
        if s <= 0.0 {
            return self.values[0];
        }
        if s >= self.s_grid[n - 1] {
            return self.values[n - 1];
        }
        let i = self.s_grid.partition_point(|&x| x <= s) - 1;
        let (s0, s1) = (self.s_grid[i], self.s_grid[i + 1]);
        if s == s0 {
            return self.values[i];
        }
        self.values[i] + (self.values[i + 1] - self.values[i]) * ((s - s0) / (s1 - s0))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["s", "tau", "value"]).map_err(io)?;
        for ((s, t), v) in self.s_grid.iter().zip(&self.tau_map).zip(&self.values) {
            w.write_record([fmt_f64(*s), fmt_f64(*t), fmt_f64(*v)]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Normalize `path` by the limit curve of `qv`, which must come from the same path.
pub fn normalize(path: &SampledPath, qv: &QVEstimate, ds: f64) -> Result<TimeChangedPath> {
    if !(ds > 0.0) || !ds.is_finite() {
        return Err(Error::domain("ds must be positive"));
    }
    let a = qv.limit();
    let grid = &qv.t_grid;
    let a_end = *a.last().ok_or(Error::NoSamples)?;
    if a_end < ds {
        return Err(Error::InsufficientQuadraticVariation { available: a_end, required: ds });
    }
    let count = (a_end / ds).floor() as usize;
    let mut s_grid = Vec::with_capacity(count + 1);
    let mut tau_map = Vec::with_capacity(count + 1);
    let mut j = 0usize;
    for k in 0..=count {
        let s = k as f64 * ds;
        if s > a_end {
            break;
        }
        while a[j] < s {
            j += 1;
        }
        s_grid.push(s);
        tau_map.push(grid[j]);
    }
    let values = path.eval_sorted(&tau_map);
    Ok(TimeChangedPath { ds, s_grid, tau_map, values, a_end })
}

/// Normalize with the ladder at `level` (default: [`normalization_level`])
/// evaluated at every path vertex.
pub fn normalize_path(path: &SampledPath, ds: f64, level: Option<u32>) -> Result<TimeChangedPath> {
    let n = match level {
        Some(n) => n,
        None => normalization_level(path)
            .ok_or_else(|| Error::InsufficientResolution("sample spacing too coarse for any level".into()))?
            .min(40),
    };
    let qv = qv_limit(path, n, n, path.times())?;
    normalize(path, &qv, ds)
}

/// Replicator level used by the hedger: `ceil(log2 sqrt(L N / S)) + 2`,
/// capped at `floor` when given. Returns `(level, capped)`.
pub fn default_replicator_level(l_steps: usize, n_coords: usize, s: f64, floor: Option<u32>) -> (u32, bool) {
    let ratio = (l_steps * n_coords) as f64 / s;
    let raw = (0.5 * ratio.log2()).ceil().max(0.0) as u32 + 2;
    match floor {
        Some(f) if raw > f => (f, true),
        _ => (raw, false),
    }
}

/// Anything that is a polyline on `[0, end]`.
pub trait Polyline {
    fn knots(&self) -> (&[f64], &[f64]);
}

impl Polyline for SampledPath {
    fn knots(&self) -> (&[f64], &[f64]) {
        (self.times(), self.values())
    }
}

impl Polyline for TimeChangedPath {
    fn knots(&self) -> (&[f64], &[f64]) {
        (&self.s_grid, &self.values)
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    if x == xs[i] {
        return ys[i];
    }
    ys[i] + (ys[i + 1] - ys[i]) * ((x - xs[i]) / (xs[i + 1] - xs[i]))
}

/// `max_{i <= j, x_j - x_i <= delta} |y_j - y_i|` over sorted points.
fn windowed_oscillation(xs: &[f64], ys: &[f64], delta: f64) -> f64 {
    let (mut maxq, mut minq): (VecDeque<usize>, VecDeque<usize>) = (VecDeque::new(), VecDeque::new());
    let mut best = 0.0f64;
    let mut lo = 0usize;
    for j in 0..xs.len() {
        while xs[j] - xs[lo] > delta {
            lo += 1;
        }
        while maxq.front().is_some_and(|&i| i < lo) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&i| i < lo) {
            minq.pop_front();
        }
        while maxq.back().is_some_and(|&i| ys[i] <= ys[j]) {
            maxq.pop_back();
        }
        maxq.push_back(j);
        while minq.back().is_some_and(|&i| ys[i] >= ys[j]) {
            minq.pop_back();
        }
        minq.push_back(j);
        best = best.max(ys[maxq[0]] - ys[minq[0]]);
    }
    best
}

fn check_modulus_args(end: f64, s: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= s) {
        return Err(Error::domain(format!("need 0 < delta <= S, got delta={delta} S={s}")));
    }
    if s > end * (1.0 + 1e-12) {
        return Err(Error::domain(format!("S={s} beyond domain end {end}")));
    }
    Ok(())
}

/// Modulus of continuity `sup {|f(s1) - f(s2)| : s1, s2 in [0,S], |s1 - s2| <= delta}`
/// of the polyline, exactly.
///
/// On each pair of segments the difference is affine, so the supremum is
/// attained with coordinates among the knots and the knots shifted by `delta`.
pub fn modulus<P: Polyline + ?Sized>(p: &P, s: f64, delta: f64) -> Result<f64> {
    let (xs, ys) = p.knots();
    if xs.is_empty() {
        return Err(Error::NoSamples);
    }
    check_modulus_args(*xs.last().unwrap(), s, delta)?;
    let mut pts: Vec<f64> = Vec::with_capacity(3 * xs.len() + 1);
    let inside = xs.iter().copied().take_while(|&x| x < s).chain(std::iter::once(s));
    for x in inside {
        pts.push(x);
        if x + delta <= s {
            pts.push(x + delta);
        }
        if x - delta >= 0.0 {
            pts.push(x - delta);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let vals: Vec<f64> = pts.iter().map(|&x| interp(xs, ys, x)).collect();
    // x + delta - x can round above delta
    Ok(windowed_oscillation(&pts, &vals, delta * (1.0 + 1e-12)))
}

/// Modulus with both points restricted to the knots.
pub fn grid_modulus<P: Polyline + ?Sized>(p: &P, s: f64, delta: f64) -> Result<f64> {
    let (xs, ys) = p.knots();
    if xs.is_empty() {
        return Err(Error::NoSamples);
    }
    check_modulus_args(*xs.last().unwrap(), s, delta)?;
    let k = xs.partition_point(|&x| x <= s);
    // tolerate rounding in grid spacing
    Ok(windowed_oscillation(&xs[..k], &ys[..k], delta * (1.0 + 1e-9)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TightnessMode {
    Modulus230,
    Modulus430,
    Sumsq64,
}

impl std::str::FromStr for TightnessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modulus_230" => Ok(TightnessMode::Modulus230),
            "modulus_430" => Ok(TightnessMode::Modulus430),
            "sumsq_64" => Ok(TightnessMode::Sumsq64),
            other => Err(Error::domain(format!("unknown tightness mode '{other}'"))),
        }
    }
}

impl TightnessMode {
    /// Bound at horizon `s` and resolution `r` (`delta` for moduli, `m` for sums).
    pub fn bound(&self, alpha: f64, s: f64, r: f64) -> f64 {
        match self {
            TightnessMode::Modulus230 => 230.0 * alpha.powf(-0.5) * s.powf(0.25) * r.powf(0.125),
            TightnessMode::Modulus430 => 430.0 * alpha.powf(-0.5) * s.sqrt() * r.powf(0.125),
            TightnessMode::Sumsq64 => 64.0 / alpha * s * s * (r / 16.0).exp2(),
        }
    }
}

/// Per-path outcome of a tightness check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTightness {
    pub tested: bool,
    pub held: bool,
    /// Largest observed statistic over its bound.
    pub worst_ratio: f64,
    pub s_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub mode: TightnessMode,
    pub alpha: f64,
    pub paths: Vec<PathTightness>,
    pub untested: usize,
    pub violations: usize,
    pub violation_frequency: f64,
    pub pass: bool,
}

pub const TIGHTNESS_DELTA_EXPONENTS: std::ops::RangeInclusive<i32> = 1..=8;

fn check_one(tc: &TimeChangedPath, alpha: f64, mode: TightnessMode) -> PathTightness {
    let end = tc.domain_end();
    let mut s_values = Vec::new();
    let mut s = 1.0;
    while s <= end * (1.0 + 1e-12) {
        s_values.push(s);
        s *= 2.0;
    }
    let mut worst = 0.0f64;
    for &s in &s_values {
        match mode {
            TightnessMode::Modulus230 | TightnessMode::Modulus430 => {
                for j in TIGHTNESS_DELTA_EXPONENTS {
                    let delta = (-(j as f64)).exp2();
                    if delta > s {
                        continue;
                    }
                    let m = grid_modulus(tc, s.min(end), delta).unwrap_or(0.0);
                    worst = worst.max(m / mode.bound(alpha, s, delta));
                }
            }
            TightnessMode::Sumsq64 => {
                let m_max = (1.0 / tc.ds).log2().floor().max(0.0) as u32;
                for m in 0..=m_max {
                    let step = (-(m as f64)).exp2();
                    let count = (s / step).round() as usize;
                    let mut sum = 0.0;
                    let mut prev = tc.at(0.0);
                    for i in 1..=count {
                        let v = tc.at(i as f64 * step);
                        sum += (v - prev) * (v - prev);
                        prev = v;
                    }
                    worst = worst.max(sum / mode.bound(alpha, s, m as f64));
                }
            }
        }
    }
    let tested = !s_values.is_empty();
    PathTightness { tested, held: worst <= 1.0, worst_ratio: worst, s_values }
}

/// Check the tightness bound `mode` on every path; PASS iff the violation
/// frequency among tested paths is at most `alpha`. Paths with `a_end < 1`
/// have no testable `S` and count as untested.
pub fn tightness_check(ensemble: &[TimeChangedPath], alpha: f64, mode: TightnessMode) -> Result<TightnessReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha={alpha} outside (0,1)")));
    }
    let paths: Vec<PathTightness> = ensemble.par_iter().map(|tc| check_one(tc, alpha, mode)).collect();
    let untested = paths.iter().filter(|p| !p.tested).count();
    let tested = paths.len() - untested;
    let violations = paths.iter().filter(|p| p.tested && !p.held).count();
    let violation_frequency = if tested == 0 { 0.0 } else { violations as f64 / tested as f64 };
    Ok(TightnessReport {
        mode,
        alpha,
        paths,
        untested,
        violations,
        violation_frequency,
        pass: violation_frequency <= alpha,
    })
}
