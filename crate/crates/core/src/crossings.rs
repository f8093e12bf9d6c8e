//! Dyadic crossing times and the quadratic-variation ladder.
//!
//! For level `n` the grid is `D_n = {k 2^-n}`. `T_0` is the first time the
//! path sits on `D_n`; `T_k` is the first time after `T_{k-1}` that the path
//! reaches a grid value different from the one at `T_{k-1}`. On a
//! piecewise-linear path these are found exactly, segment by segment.
//!
//! The ladder value at `t` is
//! `(w(T_0) - w(0))^2 + m 4^-n + (w(t) - w(T_m))^2` with `T_m` the last
//! crossing not after `t`, and `(w(t) - w(0))^2` before `T_0`.

use crate::error::{Error, Result};
use crate::paths::SampledPath;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Grid spacing `2^-n`, exact in binary floating point.
#[inline]
pub fn grid_step(n: u32) -> f64 {
    (-(n as f64)).exp2()
}

/// Crossing times of one dyadic level (finite ones only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingLadder {
    pub level: u32,
    pub crossing_times: Vec<f64>,
    pub crossing_values: Vec<f64>,
    /// `(w(T_0) - w(0))^2`, zero when there is no crossing.
    pub first_value_offset: f64,
    /// Time up to which crossings were searched.
    pub t_max: f64,
}

impl CrossingLadder {
    pub fn len(&self) -> usize {
        self.crossing_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crossing_times.is_empty()
    }

    /// Number of completed moves `T_1, T_2, ...` (excludes `T_0`).
    pub fn moves(&self) -> usize {
        self.crossing_times.len().saturating_sub(1)
    }

    /// Ladder value `A^n_t` for `t <= t_max`.
    pub fn value_at(&self, path: &SampledPath, t: f64) -> f64 {
        let m = self.crossing_times.partition_point(|&x| x <= t);
        self.value_with(m, t, path.at(t), path.start_value())
    }

    #[inline]
    fn value_with(&self, m: usize, t: f64, w_t: f64, w_0: f64) -> f64 {
        if m == 0 {
            let d = w_t - w_0;
            return d * d;
        }
        let last = m - 1;
        let partial = if t == self.crossing_times[last] {
            0.0
        } else {
            let d = w_t - self.crossing_values[last];
            d * d
        };
        let q = grid_step(self.level) * grid_step(self.level);
        self.first_value_offset + last as f64 * q + partial
    }

    /// Ladder values on a nondecreasing grid.
    pub fn curve(&self, path: &SampledPath, grid: &[f64]) -> Vec<f64> {
        let values = path.eval_sorted(grid);
        let w0 = path.start_value();
        let mut m = 0usize;
        grid.iter()
            .zip(values)
            .map(|(&t, w)| {
                while m < self.crossing_times.len() && self.crossing_times[m] <= t {
                    m += 1;
                }
                self.value_with(m, t, w, w0)
            })
            .collect()
    }
}

/// Rounds the offset onto the lattice `2^-50 Z` for `n <= 25`, so that
/// `offset + m 4^-n` is exact while the ladder stays below 8 and increments
/// at crossing times come out as exactly `4^-n`. Moves the value by at most
/// `2^-51`.
pub(crate) fn snap_offset(x: f64, n: u32) -> f64 {
    if n > 25 {
        return x;
    }
    const LATTICE: f64 = 1.0 / (1u64 << 50) as f64;
    (x / LATTICE).round() * LATTICE
}

/// Exact crossing times of `D_n` on `[0, t_max]`.
pub fn crossing_times(path: &SampledPath, n: u32, t_max: f64) -> CrossingLadder {
    let h = grid_step(n);
    let times = path.times();
    let values = path.values();
    let t_max = t_max.min(path.horizon());
    let mut ladder = CrossingLadder {
        level: n,
        crossing_times: Vec::new(),
        crossing_values: Vec::new(),
        first_value_offset: 0.0,
        t_max,
    };
    let w0 = values[0];

    // Current grid index after T_0; None before it.
    let mut current: Option<i64> = None;
    let k0 = w0 / h;
    if k0 == k0.floor() {
        current = Some(k0 as i64);
        ladder.crossing_times.push(0.0);
        ladder.crossing_values.push(w0);
    }
    let (lo, hi) = ((w0 / h).floor() as i64, (w0 / h).floor() as i64 + 1);

    for i in 0..times.len().saturating_sub(1) {
        let (t0, y0) = (times[i], values[i]);
        if t0 >= t_max {
            break;
        }
        let (mut t1, mut y1) = (times[i + 1], values[i + 1]);
        if t1 > t_max {
            t1 = t_max;
            y1 = path.interp(i, t_max);
        }
        if y1 == y0 {
            continue;
        }
        let at = |target: f64| -> f64 {
            let s = (target - y0) / (y1 - y0);
            if s >= 1.0 {
                t1
            } else {
                t0 + s * (t1 - t0)
            }
        };
        let mut k = match current {
            Some(k) => k,
            None => {
                let first = if y1 > y0 && y1 >= hi as f64 * h {
                    hi
                } else if y1 < y0 && y1 <= lo as f64 * h {
                    lo
                } else {
                    continue;
                };
                let v = first as f64 * h;
                ladder.crossing_times.push(at(v));
                ladder.crossing_values.push(v);
                ladder.first_value_offset = snap_offset((v - w0) * (v - w0), n);
                first
            }
        };
        if y1 > y0 {
            while (k + 1) as f64 * h <= y1 {
                k += 1;
                let v = k as f64 * h;
                ladder.crossing_times.push(at(v));
                ladder.crossing_values.push(v);
            }
        } else {
            while (k - 1) as f64 * h >= y1 {
                k -= 1;
                let v = k as f64 * h;
                ladder.crossing_times.push(at(v));
                ladder.crossing_values.push(v);
            }
        }
        current = Some(k);
    }
    ladder
}

/// `A^n_t` computed from a fresh ladder on `[0, t]`.
pub fn qv_ladder(path: &SampledPath, n: u32, t: f64) -> f64 {
    let t_eff = t.min(path.horizon());
    let ladder = crossing_times(path, n, t_eff);
    // beyond the horizon the path is frozen, so the ladder is too
    ladder.value_at(path, t_eff)
}

/// Finest level `n` with `2^-n >= 3 sqrt(dt_max)`, if any.
pub fn resolution_floor_level(path: &SampledPath) -> Option<u32> {
    let dt = path.max_spacing();
    if dt == 0.0 {
        return Some(u32::MAX);
    }
    let bound = -(3.0 * dt.sqrt()).log2();
    if bound < 0.0 {
        None
    } else {
        Some(bound.floor() as u32)
    }
}

/// Finest level with `2^-n >= 24 sqrt(dt_max)`.
///
/// At the resolution floor the polyline's overshoot past each grid line
/// shortens the ladder: for Brownian samples `A^n` comes out near
/// `1 / (1 + 1.17 sqrt(dt) 2^n)` of the true clock, about 0.77 at the floor.
/// The wider spacing keeps that shortfall under 5%.
pub fn normalization_level(path: &SampledPath) -> Option<u32> {
    let dt = path.max_spacing();
    if dt == 0.0 {
        return Some(u32::MAX);
    }
    let bound = -(24.0 * dt.sqrt()).log2();
    if bound < 0.0 {
        None
    } else {
        Some(bound.floor() as u32)
    }
}

/// Per-level ladder curves with their Cauchy gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVEstimate {
    pub levels: Vec<u32>,
    pub t_grid: Vec<f64>,
    /// `curves[i]` is the ladder of `levels[i]` on `t_grid`.
    pub curves: Vec<Vec<f64>>,
    /// `(n, sup_t |A^n_t - A^{n-1}_t|)` for every `n` whose predecessor is in range.
    pub cauchy_gaps: Vec<(u32, f64)>,
    pub resolution_floor_flag: bool,
    pub floor_level: Option<u32>,
    pub dt_max: f64,
}

impl QVEstimate {
    pub fn top_level(&self) -> u32 {
        *self.levels.last().unwrap()
    }

    /// The limit estimate `A`, taken as the top-level curve.
    pub fn limit(&self) -> &[f64] {
        self.curves.last().unwrap()
    }

    pub fn curve(&self, n: u32) -> Option<&[f64]> {
        self.levels.iter().position(|&l| l == n).map(|i| self.curves[i].as_slice())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let curves: BTreeMap<u32, &Vec<f64>> =
            self.levels.iter().copied().zip(self.curves.iter()).collect();
        let gaps: BTreeMap<u32, f64> = self.cauchy_gaps.iter().copied().collect();
        serde_json::json!({
            "t_grid": self.t_grid,
            "levels": curves,
            "cauchy_gaps": gaps,
            "limit_level": self.top_level(),
            "resolution_floor_flag": self.resolution_floor_flag,
            "floor_level": self.floor_level,
            "dt_max": self.dt_max,
        })
    }
}

/// Ladder curves for every level in `n_lo..=n_hi` on `t_grid`.
///
/// `t_grid` must be nondecreasing. Levels finer than the resolution floor set
/// `resolution_floor_flag` instead of failing.
pub fn qv_limit(path: &SampledPath, n_lo: u32, n_hi: u32, t_grid: &[f64]) -> Result<QVEstimate> {
    if n_hi < n_lo {
        return Err(Error::domain(format!("empty level range {n_lo}..={n_hi}")));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("query grid must be nondecreasing"));
    }
    let t_max = t_grid.last().copied().unwrap_or(0.0).min(path.horizon());
    let levels: Vec<u32> = (n_lo..=n_hi).collect();
    let curves: Vec<Vec<f64>> = levels
        .par_iter()
        .map(|&n| crossing_times(path, n, t_max).curve(path, t_grid))
        .collect();
    let cauchy_gaps = curves
        .windows(2)
        .zip(levels.iter().skip(1))
        .map(|(pair, &n)| {
            let gap = pair[0].iter().zip(&pair[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (n, gap)
        })
        .collect();
    let floor_level = resolution_floor_level(path);
    let resolution_floor_flag = floor_level.map_or(true, |f| n_hi > f);
    Ok(QVEstimate {
        levels,
        t_grid: t_grid.to_vec(),
        curves,
        cauchy_gaps,
        resolution_floor_flag,
        floor_level,
        dt_max: path.max_spacing(),
    })
}

/// Maximal windows of consecutive grid points whose oscillation is at most `thr`.
pub(crate) fn flat_windows(xs: &[f64], ys: &[f64], thr: f64) -> Vec<(f64, f64)> {
    use std::collections::VecDeque;
    let n = xs.len();
    let mut out = Vec::new();
    let (mut maxq, mut minq): (VecDeque<usize>, VecDeque<usize>) = (VecDeque::new(), VecDeque::new());
    let mut r = 0usize; // exclusive end of window
    let mut prev_end: Option<usize> = None;
    for i in 0..n {
        while maxq.front().is_some_and(|&j| j < i) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&j| j < i) {
            minq.pop_front();
        }
        if r < i {
            r = i;
        }
        while r < n {
            let hi = maxq.front().map_or(ys[r], |&j| ys[j].max(ys[r]));
            let lo = minq.front().map_or(ys[r], |&j| ys[j].min(ys[r]));
            if hi - lo > thr {
                break;
            }
            while maxq.back().is_some_and(|&j| ys[j] <= ys[r]) {
                maxq.pop_back();
            }
            maxq.push_back(r);
            while minq.back().is_some_and(|&j| ys[j] >= ys[r]) {
                minq.pop_back();
            }
            minq.push_back(r);
            r += 1;
        }
        let end = r - 1;
        if end > i && prev_end.map_or(true, |p| end > p) {
            out.push((xs[i], xs[end]));
        }
        prev_end = Some(end);
    }
    out
}

/// Candidate intervals of constancy of the path and of its QV clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstancyReport {
    /// Maximal vertex windows where the path oscillates by at most `eps`.
    pub path_intervals: Vec<(f64, f64)>,
    /// Maximal `t_grid` windows where the limit curve oscillates by at most `eps^2`.
    pub qv_intervals: Vec<(f64, f64)>,
}

pub fn constancy_intervals(qv: &QVEstimate, path: &SampledPath, eps: f64) -> Result<ConstancyReport> {
    if !(eps > 0.0) {
        return Err(Error::domain("eps must be positive"));
    }
    Ok(ConstancyReport {
        path_intervals: flat_windows(path.times(), path.values(), eps),
        qv_intervals: flat_windows(&qv.t_grid, qv.limit(), eps * eps),
    })
}
