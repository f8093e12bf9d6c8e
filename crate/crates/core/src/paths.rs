//! Continuous paths sampled at finitely many vertices.
//!
//! A [`SampledPath`] is read as the piecewise-linear interpolant of its
//! vertices, frozen at the last value beyond the final sample. Generators
//! draw Gaussian increments by inversion from a counter-based source, so a
//! given seed always yields the same path.

use crate::error::{Error, Result};
use crate::special::CounterRng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PathMeta {
    pub label: String,
    pub seed: Option<u64>,
}

/// Immutable piecewise-linear path with `times[0] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<f64>,
    meta: Option<PathMeta>,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::NoSamples);
        }
        if times.len() != values.len() {
            return Err(Error::domain(format!(
                "times and values differ in length ({} vs {})",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::domain("first time must be 0"));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::domain(format!("times not strictly increasing at index {}", i + 1)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at index {i}")));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::domain(format!("non-finite time at index {i}")));
        }
        Ok(SampledPath { times, values, meta: None })
    }

    pub fn with_meta(mut self, label: impl Into<String>, seed: Option<u64>) -> Self {
        self.meta = Some(PathMeta { label: label.into(), seed });
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> Option<&PathMeta> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn start_value(&self) -> f64 {
        self.values[0]
    }

    /// Largest gap between consecutive sample times (0 for a single sample).
    pub fn max_spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Largest absolute segment slope, the Lipschitz constant of the interpolant.
    pub fn max_slope(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
            .fold(0.0, f64::max)
    }

    /// Path value at `t`, or a domain error for negative `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("evaluation time {t} is negative")));
        }
        Ok(self.at(t))
    }

    /// Infallible evaluation for `t >= 0`; negative times clamp to the start.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        if t <= 0.0 {
            return self.values[0];
        }
        // first index with times[i] > t, i >= 1
        let i = self.times.partition_point(|&x| x <= t);
        self.interp(i - 1, t)
    }

    #[inline]
    pub(crate) fn interp(&self, seg: usize, t: f64) -> f64 {
        let (t0, t1) = (self.times[seg], self.times[seg + 1]);
        let (v0, v1) = (self.values[seg], self.values[seg + 1]);
        if t == t0 {
            return v0;
        }
        if t == t1 {
            return v1;
        }
        v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
    }

    /// Evaluate on a nondecreasing grid in one pass.
    pub fn eval_sorted(&self, grid: &[f64]) -> Vec<f64> {
        let n = self.times.len();
        let mut seg = 0usize;
        grid.iter()
            .map(|&t| {
                if t >= self.times[n - 1] {
                    return self.values[n - 1];
                }
                if t <= 0.0 {
                    return self.values[0];
                }
                while self.times[seg + 1] <= t {
                    seg += 1;
                }
                self.interp(seg, t)
            })
            .collect()
    }

    /// Path restricted to `[0, t_max]`, with a vertex inserted at `t_max`.
    pub fn truncate(&self, t_max: f64) -> SampledPath {
        if t_max >= self.horizon() {
            return self.clone();
        }
        let k = self.times.partition_point(|&x| x < t_max);
        let mut times = self.times[..k].to_vec();
        let mut values = self.values[..k].to_vec();
        if times.last().map_or(true, |&l| l < t_max) {
            times.push(t_max);
            values.push(self.at(t_max));
        }
        SampledPath { times, values, meta: self.meta.clone() }
    }

    /// Add a constant to every value.
    pub fn shifted(&self, by: f64) -> SampledPath {
        SampledPath {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v + by).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Write as `t,value` CSV with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"]).map_err(csv_err)?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([fmt_f64(*t), fmt_f64(*v)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn check_grid_params(horizon: f64, dt: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(dt > 0.0) || dt > horizon {
        return Err(Error::domain(format!("dt must lie in (0, horizon], got {dt}")));
    }
    Ok(())
}

/// Uniform time grid `0, dt, 2dt, ...` ending exactly at `horizon`.
pub fn uniform_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    check_grid_params(horizon, dt)?;
    let ratio = horizon / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    grid.push(horizon);
    Ok(grid)
}

/// Brownian motion started at `start`, sampled on a uniform grid.
pub fn gen_brownian(seed: u64, horizon: f64, dt: f64, start: f64) -> Result<SampledPath> {
    gen_time_changed_brownian(seed, &TimeChange::Identity, horizon, dt, start)
        .map(|p| p.with_meta("brownian", Some(seed)))
}

/// `start + W(f(t))` sampled on a uniform grid, with exact Gaussian increments
/// of variance `f(t_{k+1}) - f(t_k)`.
pub fn gen_time_changed_brownian(
    seed: u64,
    clock: &TimeChange,
    horizon: f64,
    dt: f64,
    start: f64,
) -> Result<SampledPath> {
    clock.validate()?;
    let times = uniform_grid(horizon, dt)?;
    let rng = CounterRng::new(seed, 0);
    let mut values = Vec::with_capacity(times.len());
    values.push(start);
    let mut x = start;
    let mut f_prev = clock.apply(0.0);
    for (k, w) in times.windows(2).enumerate() {
        let f_next = clock.apply(w[1]);
        let var = (f_next - f_prev).max(0.0);
        x += var.sqrt() * rng.normal(k as u64);
        values.push(x);
        f_prev = f_next;
    }
    Ok(SampledPath::new(times, values)?.with_meta("time_changed_brownian", Some(seed)))
}

/// Geometric Brownian motion `start * exp(sigma W(t) - sigma^2 t / 2)`.
pub fn gen_geometric_brownian(
    seed: u64,
    horizon: f64,
    dt: f64,
    start: f64,
    sigma: f64,
) -> Result<SampledPath> {
    if !(start > 0.0) {
        return Err(Error::domain("geometric Brownian motion needs a positive start"));
    }
    let times = uniform_grid(horizon, dt)?;
    let rng = CounterRng::new(seed, 0);
    let mut values = Vec::with_capacity(times.len());
    let mut log_x = start.ln();
    values.push(start);
    for (k, w) in times.windows(2).enumerate() {
        let h = w[1] - w[0];
        log_x += sigma * h.sqrt() * rng.normal(k as u64) - 0.5 * sigma * sigma * h;
        values.push(log_x.exp());
    }
    Ok(SampledPath::new(times, values)?.with_meta("geometric_brownian", Some(seed)))
}

/// Parameters for [`gen_analytic`]; unused fields are ignored per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub horizon: f64,
    pub value: f64,
    pub amp: f64,
    pub period: f64,
    pub cycles: usize,
    pub drift: f64,
    pub frequency: f64,
    pub points: usize,
}

impl Default for AnalyticParams {
    fn default() -> Self {
        AnalyticParams {
            horizon: 1.0,
            value: 0.0,
            amp: 1.0,
            period: 2.0,
            cycles: 1,
            drift: 0.0,
            frequency: 1.0,
            points: 1001,
        }
    }
}

/// Deterministic fixtures.
///
/// * `identity`: vertices `(0,0), (h,h)`.
/// * `constant`: vertices `(0,c), (h,c)`.
/// * `zigzag`: `amp` at odd half-periods, 0 at even ones, for `cycles` periods.
/// * `sine_drift`: `drift*t + amp*sin(frequency*t)` on `points` uniform vertices.
pub fn gen_analytic(kind: &str, params: &AnalyticParams) -> Result<SampledPath> {
    let h = params.horizon;
    let path = match kind {
        "identity" => {
            check_grid_params(h, h)?;
            SampledPath::new(vec![0.0, h], vec![0.0, h])?
        }
        "constant" => {
            check_grid_params(h, h)?;
            SampledPath::new(vec![0.0, h], vec![params.value; 2])?
        }
        "zigzag" => {
            if !(params.period > 0.0) || params.cycles == 0 {
                return Err(Error::domain("zigzag needs period > 0 and cycles >= 1"));
            }
            let half = params.period / 2.0;
            let n = 2 * params.cycles;
            let times = (0..=n).map(|k| k as f64 * half).collect();
            let values = (0..=n).map(|k| if k % 2 == 1 { params.amp } else { 0.0 }).collect();
            SampledPath::new(times, values)?
        }
        "sine_drift" => {
            if params.points < 2 {
                return Err(Error::domain("sine_drift needs at least 2 points"));
            }
            check_grid_params(h, h)?;
            let m = params.points - 1;
            let times: Vec<f64> =
                (0..=m).map(|k| if k == m { h } else { h * k as f64 / m as f64 }).collect();
            let values = times
                .iter()
                .map(|&t| params.drift * t + params.amp * (params.frequency * t).sin())
                .collect();
            SampledPath::new(times, values)?
        }
        other => return Err(Error::domain(format!("unknown analytic kind '{other}'"))),
    };
    Ok(path.with_meta(kind, None))
}

/// A continuous nondecreasing time change with `f(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeChange {
    Identity,
    /// `f == 0`.
    Zero,
    /// `f(t) = rate * t`.
    Linear(f64),
    /// `f(t) = t + amp * sin(t)`, nondecreasing for `|amp| <= 1`.
    SineClock(f64),
    /// Piecewise-linear `f` given by a sampled path.
    Sampled(SampledPath),
    /// `t -> outer(inner(t))`.
    Composed(Box<TimeChange>, Box<TimeChange>),
}

impl TimeChange {
    pub fn validate(&self) -> Result<()> {
        match self {
            TimeChange::Identity | TimeChange::Zero => Ok(()),
            TimeChange::Linear(r) if *r >= 0.0 && r.is_finite() => Ok(()),
            TimeChange::Linear(r) => Err(Error::domain(format!("linear time change rate {r} < 0"))),
            TimeChange::SineClock(a) if a.abs() <= 1.0 => Ok(()),
            TimeChange::SineClock(a) => {
                Err(Error::domain(format!("t + {a} sin t is not nondecreasing")))
            }
            TimeChange::Sampled(p) => {
                if p.values()[0] != 0.0 {
                    return Err(Error::domain("sampled time change must satisfy f(0) = 0"));
                }
                if p.values().windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::domain("sampled time change must be nondecreasing"));
                }
                Ok(())
            }
            TimeChange::Composed(outer, inner) => {
                outer.validate()?;
                inner.validate()
            }
        }
    }

    pub fn apply(&self, t: f64) -> f64 {
        match self {
            TimeChange::Identity => t,
            TimeChange::Zero => 0.0,
            TimeChange::Linear(r) => r * t,
            TimeChange::SineClock(a) => t + a * t.sin(),
            TimeChange::Sampled(p) => p.at(t),
            TimeChange::Composed(outer, inner) => outer.apply(inner.apply(t)),
        }
    }

    /// `self ∘ inner`.
    pub fn after(self, inner: TimeChange) -> TimeChange {
        TimeChange::Composed(Box::new(self), Box::new(inner))
    }
}

fn check_out_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::domain("output grid must start at 0"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("output grid must be strictly increasing"));
    }
    Ok(())
}

/// `t -> path(f(t))` sampled on `out_grid`.
pub fn compose_time_change(
    path: &SampledPath,
    f: &TimeChange,
    out_grid: &[f64],
) -> Result<SampledPath> {
    f.validate()?;
    check_out_grid(out_grid)?;
    let values = out_grid.iter().map(|&t| path.at(f.apply(t))).collect();
    SampledPath::new(out_grid.to_vec(), values)
}

/// Column selector for [`ingest_csv`].
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub time_col: Column,
    pub value_col: Column,
    pub rebase_time: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            time_col: Column::Index(0),
            value_col: Column::Index(1),
            rebase_time: true,
        }
    }
}

/// Read a two-column time series. Rows are numbered from 1, not counting the header.
pub fn ingest_csv<R: Read>(source: R, options: &CsvOptions) -> Result<SampledPath> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let resolve = |col: &Column, headers: Option<&csv::StringRecord>| -> Result<usize> {
        match col {
            Column::Index(i) => Ok(*i),
            Column::Name(name) => headers
                .and_then(|h| h.iter().position(|x| x == name))
                .ok_or_else(|| Error::Parse { row: 0, msg: format!("no column named '{name}'") }),
        }
    };
    let headers = if options.has_header {
        Some(reader.headers().map_err(|e| Error::Parse { row: 0, msg: e.to_string() })?.clone())
    } else {
        None
    };
    let tc = resolve(&options.time_col, headers.as_ref())?;
    let vc = resolve(&options.value_col, headers.as_ref())?;

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec
                .get(c)
                .ok_or_else(|| Error::Parse { row, msg: format!("missing column {c}") })?;
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse { row, msg: format!("non-numeric cell '{s}'") })
        };
        let t = cell(tc)?;
        let v = cell(vc)?;
        if let Some(&prev) = times.last() {
            if t == prev {
                return Err(Error::Parse { row, msg: format!("duplicate timestamp {t}") });
            }
            if t < prev {
                return Err(Error::Parse { row, msg: format!("time {t} not after {prev}") });
            }
        }
        times.push(t);
        values.push(v);
    }
    if times.is_empty() {
        return Err(Error::NoSamples);
    }
    if options.rebase_time {
        let t0 = times[0];
        for t in &mut times {
            *t -= t0;
        }
        // rebasing can collapse nearby large timestamps
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Parse { row: i + 2, msg: "times collapse after rebasing".into() });
        }
    } else if times[0] != 0.0 {
        return Err(Error::Parse { row: 1, msg: "first time must be 0 unless rebasing".into() });
    }
    SampledPath::new(times, values)
}
