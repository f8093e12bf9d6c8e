//! Simple trading strategies and their capital processes.
//!
//! A strategy subscribes to a set of path events (dyadic crossings, sample
//! vertices, scheduled times) and is fed them in time order, seeing only the
//! time and price of each one. After each event it may change its position.
//! Capital follows `K_t = c + sum h_n (w(tau_{n+1} ^ t) - w(tau_n ^ t))`.
//!
//! The engine stores capital only at position changes and evaluates
//! `K_e + h_e (w(t) - p_e)` in between, so recomputing capital from the stored
//! events reproduces the online values bit for bit.

mod hoeffding;
mod parity;
mod replicator;

pub use hoeffding::{
    hoeffding_bet_fraction, hoeffding_process, hoeffding_step, HoeffdingParity, HoeffdingRound,
};
pub use parity::ParityBettor;
pub use replicator::{quadratic_replicator, QuadraticReplicator};

use crate::crossings::crossing_times;
use crate::error::{Error, Result};
use crate::paths::{fmt_f64, SampledPath};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default cap on events processed in one run.
pub const DEFAULT_MAX_EVENTS: usize = 50_000_000;

/// Which events a strategy wants to see.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Subscription {
    /// Dyadic levels whose crossings are delivered.
    pub levels: Vec<u32>,
    /// Deliver every sample vertex of the path.
    pub samples: bool,
    /// Fixed times at which an event is delivered.
    pub scheduled: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    /// Crossing `index` (that is `T^level_index`) of the dyadic grid `level`.
    Crossing { level: u32, index: usize },
    Scheduled,
    /// Path vertex `index`.
    Sample { index: usize },
}

impl EventKind {
    fn rank(&self) -> (u8, u32) {
        match *self {
            EventKind::Crossing { level, .. } => (0, level),
            EventKind::Scheduled => (1, 0),
            EventKind::Sample { .. } => (2, 0),
        }
    }
}

/// One observation handed to a strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketEvent {
    pub time: f64,
    pub price: f64,
    pub kind: EventKind,
}

/// A stateful betting rule driven by path events.
pub trait SimpleStrategy {
    /// Every emitted position must satisfy `|h| <= bet_bound()`.
    fn bet_bound(&self) -> f64;

    fn subscription(&self) -> Subscription;

    /// New position to hold from this event on, or `None` to keep the current one.
    fn on_event(&mut self, event: &MarketEvent) -> Option<f64>;

    fn name(&self) -> String {
        "strategy".into()
    }
}

/// What happens when capital reaches zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopRule {
    #[default]
    None,
    /// Stop betting forever at the first time capital hits 0; a strictly
    /// negative value observed at an event is a fault.
    AtZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub stop: StopRule,
    pub max_events: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { stop: StopRule::None, max_events: DEFAULT_MAX_EVENTS }
    }
}

/// A position change: from `time` on, hold `bet`; `capital` is the value at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetEvent {
    pub time: f64,
    pub bet: f64,
    pub price: f64,
    pub capital: f64,
}

/// Capital of a strategy along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalTrajectory {
    pub initial: f64,
    pub events: Vec<BetEvent>,
    pub grid: Vec<f64>,
    pub capital: Vec<f64>,
    pub terminal: f64,
    pub running_max: f64,
    pub running_min: f64,
    /// Time the stop rule fired, if it did.
    pub stopped_at: Option<f64>,
    /// Per-component trajectories of a combined process.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub components: Vec<CapitalTrajectory>,
}

impl CapitalTrajectory {
    /// Capital at `t` recomputed from the stored events.
    pub fn capital_at(&self, path: &SampledPath, t: f64) -> f64 {
        if !self.components.is_empty() {
            return self.components.iter().map(|c| c.capital_at(path, t)).sum::<f64>()
                + (self.initial - self.components.iter().map(|c| c.initial).sum::<f64>());
        }
        if let Some(s) = self.stopped_at {
            if t >= s {
                return 0.0;
            }
        }
        let k = self.events.partition_point(|e| e.time <= t);
        if k == 0 {
            return self.initial;
        }
        let e = &self.events[k - 1];
        if e.bet == 0.0 {
            e.capital
        } else {
            e.capital + e.bet * (path.at(t) - e.price)
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "capital"]).map_err(|e| Error::Io(e.to_string()))?;
        for (t, k) in self.grid.iter().zip(&self.capital) {
            w.write_record([fmt_f64(*t), fmt_f64(*k)]).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// All subscribed events of `path` in delivery order.
pub fn build_events(path: &SampledPath, sub: &Subscription) -> Vec<MarketEvent> {
    let horizon = path.horizon();
    let mut events = Vec::new();
    for &level in &sub.levels {
        let ladder = crossing_times(path, level, horizon);
        for (index, (&time, &price)) in
            ladder.crossing_times.iter().zip(&ladder.crossing_values).enumerate()
        {
            events.push(MarketEvent { time, price, kind: EventKind::Crossing { level, index } });
        }
    }
    let mut sched: Vec<f64> = sub.scheduled.iter().copied().filter(|t| *t >= 0.0 && *t <= horizon).collect();
    sched.sort_by(f64::total_cmp);
    sched.dedup();
    let sched_vals = path.eval_sorted(&sched);
    for (time, price) in sched.into_iter().zip(sched_vals) {
        events.push(MarketEvent { time, price, kind: EventKind::Scheduled });
    }
    if sub.samples {
        for (index, (&time, &price)) in path.times().iter().zip(path.values()).enumerate() {
            events.push(MarketEvent { time, price, kind: EventKind::Sample { index } });
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.rank().cmp(&b.kind.rank())));
    events
}

/// First time in `(t_a, t_b]` at which the path reaches `target`, if any.
fn first_hit(path: &SampledPath, t_a: f64, t_b: f64, target: f64) -> Option<f64> {
    let times = path.times();
    let values = path.values();
    let y_a = path.at(t_a);
    if y_a == target {
        return Some(t_a);
    }
    let above = y_a > target;
    let mut prev = (t_a, y_a);
    let mut i = times.partition_point(|&x| x <= t_a);
    loop {
        let (t1, y1) = if i < times.len() && times[i] < t_b {
            (times[i], values[i])
        } else {
            (t_b, path.at(t_b))
        };
        if (above && y1 <= target) || (!above && y1 >= target) {
            let s = (target - prev.1) / (y1 - prev.1);
            return Some((prev.0 + s * (t1 - prev.0)).clamp(prev.0, t1));
        }
        if t1 >= t_b {
            return None;
        }
        prev = (t1, y1);
        i += 1;
    }
}

/// Run `strategy` along `path` from capital `c`, sampling capital on `grid`.
pub fn run_capital(
    strategy: &mut dyn SimpleStrategy,
    path: &SampledPath,
    c: f64,
    grid: &[f64],
) -> Result<CapitalTrajectory> {
    run_capital_with(strategy, path, c, grid, EngineOptions::default())
}

pub fn run_capital_with(
    strategy: &mut dyn SimpleStrategy,
    path: &SampledPath,
    c: f64,
    grid: &[f64],
    opts: EngineOptions,
) -> Result<CapitalTrajectory> {
    let bound = strategy.bet_bound();
    if !bound.is_finite() || bound < 0.0 {
        return Err(Error::StrategyFault(format!("bet bound {bound} is not finite")));
    }
    if !c.is_finite() {
        return Err(Error::domain("initial capital must be finite"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("capital grid must be nondecreasing"));
    }
    let events = build_events(path, &strategy.subscription());
    if events.len() > opts.max_events {
        return Err(Error::StrategyFault(format!(
            "{} events exceed the cap of {}",
            events.len(),
            opts.max_events
        )));
    }

    let tol = 1e-9 * c.abs().max(1.0);
    let mut recorded: Vec<BetEvent> = Vec::new();
    // anchor of the current position
    let (mut k_anchor, mut p_anchor, mut h) = (c, path.start_value(), 0.0f64);
    let mut t_prev = 0.0f64;
    let mut stopped_at: Option<f64> = None;
    let (mut run_max, mut run_min) = (c, c);

    for ev in &events {
        let k_now = if h == 0.0 { k_anchor } else { k_anchor + h * (ev.price - p_anchor) };
        if opts.stop == StopRule::AtZero && h != 0.0 {
            let target = p_anchor - k_anchor / h;
            if let Some(ts) = first_hit(path, t_prev, ev.time, target) {
                if ts < ev.time || k_now <= 0.0 {
                    if k_now < -tol && ts >= ev.time {
                        return Err(Error::StrategyFault(format!(
                            "capital {k_now} went negative at t={}",
                            ev.time
                        )));
                    }
                    stopped_at = Some(ts);
                    recorded.push(BetEvent { time: ts, bet: 0.0, price: target, capital: 0.0 });
                    run_min = run_min.min(0.0);
                    break;
                }
            }
        }
        run_max = run_max.max(k_now);
        run_min = run_min.min(k_now);
        t_prev = ev.time;
        if opts.stop == StopRule::AtZero && k_now <= 0.0 {
            if k_now < -tol {
                return Err(Error::StrategyFault(format!(
                    "capital {k_now} went negative at t={}",
                    ev.time
                )));
            }
            stopped_at = Some(ev.time);
            recorded.push(BetEvent { time: ev.time, bet: 0.0, price: ev.price, capital: 0.0 });
            break;
        }
        if let Some(bet) = strategy.on_event(ev) {
            if !(bet.abs() <= bound) {
                return Err(Error::StrategyFault(format!(
                    "{} emitted bet {bet} beyond its bound {bound} at t={}",
                    strategy.name(),
                    ev.time
                )));
            }
            if bet != h {
                k_anchor = k_now;
                p_anchor = ev.price;
                h = bet;
                recorded.push(BetEvent { time: ev.time, bet, price: ev.price, capital: k_now });
            }
        }
    }

    // Stop rule may still fire after the last event.
    if opts.stop == StopRule::AtZero && stopped_at.is_none() && h != 0.0 && t_prev < path.horizon() {
        let target = p_anchor - k_anchor / h;
        if let Some(ts) = first_hit(path, t_prev, path.horizon(), target) {
            stopped_at = Some(ts);
            recorded.push(BetEvent { time: ts, bet: 0.0, price: target, capital: 0.0 });
            run_min = run_min.min(0.0);
        }
    }

    let mut traj = CapitalTrajectory {
        initial: c,
        events: recorded,
        grid: grid.to_vec(),
        capital: Vec::new(),
        terminal: 0.0,
        running_max: run_max,
        running_min: run_min,
        stopped_at,
        components: Vec::new(),
    };
    traj.capital = grid.iter().map(|&t| traj.capital_at(path, t)).collect();
    traj.terminal = traj.capital_at(path, path.horizon());
    for &k in traj.capital.iter().chain(std::iter::once(&traj.terminal)) {
        traj.running_max = traj.running_max.max(k);
        traj.running_min = traj.running_min.min(k);
    }
    Ok(traj)
}

/// Sum of nonnegative capital processes, each stopped when it hits zero.
pub fn combine_positive(
    components: Vec<(Box<dyn SimpleStrategy + Send>, f64)>,
    path: &SampledPath,
    grid: &[f64],
) -> Result<CapitalTrajectory> {
    if components.is_empty() {
        return Err(Error::domain("no components"));
    }
    let mut trajs = Vec::with_capacity(components.len());
    for (mut s, c) in components {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::domain(format!("component capital {c} must be positive")));
        }
        let opts = EngineOptions { stop: StopRule::AtZero, ..Default::default() };
        trajs.push(run_capital_with(s.as_mut(), path, c, grid, opts)?);
    }
    Ok(sum_trajectories(trajs, path, grid))
}

pub(crate) fn sum_trajectories(
    trajs: Vec<CapitalTrajectory>,
    path: &SampledPath,
    grid: &[f64],
) -> CapitalTrajectory {
    let initial: f64 = trajs.iter().map(|t| t.initial).sum();
    let capital: Vec<f64> =
        (0..grid.len()).map(|i| trajs.iter().map(|t| t.capital[i]).sum()).collect();
    let terminal: f64 = trajs.iter().map(|t| t.terminal).sum();

    let mut times: Vec<f64> = trajs.iter().flat_map(|t| t.events.iter().map(|e| e.time)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut events = Vec::with_capacity(times.len());
    let (mut run_max, mut run_min) = (initial, initial);
    for &t in &times {
        let k: f64 = trajs.iter().map(|c| c.capital_at(path, t)).sum();
        let bet: f64 = trajs
            .iter()
            .map(|c| {
                let j = c.events.partition_point(|e| e.time <= t);
                if j == 0 { 0.0 } else { c.events[j - 1].bet }
            })
            .sum();
        run_max = run_max.max(k);
        run_min = run_min.min(k);
        events.push(BetEvent { time: t, bet, price: path.at(t), capital: k });
    }
    for &k in capital.iter().chain(std::iter::once(&terminal)) {
        run_max = run_max.max(k);
        run_min = run_min.min(k);
    }
    CapitalTrajectory {
        initial,
        events,
        grid: grid.to_vec(),
        capital,
        terminal,
        running_max: run_max,
        running_min: run_min,
        stopped_at: None,
        components: trajs,
    }
}

/// Capital on a constant path must stay exactly at its initial value.
pub fn coherence_check(strategy: &mut dyn SimpleStrategy, value: f64) -> bool {
    let sub = strategy.subscription();
    let end = sub.scheduled.iter().copied().fold(0.0f64, f64::max) + 1.0;
    let end = end.max(1.0);
    let Ok(path) = SampledPath::new(vec![0.0, end], vec![value, value]) else {
        return false;
    };
    let grid: Vec<f64> = (0..=64).map(|k| end * k as f64 / 64.0).collect();
    let c = 1.0;
    match run_capital(strategy, &path, c, &grid) {
        Ok(traj) => {
            traj.capital.iter().all(|&k| k == c)
                && traj.events.iter().all(|e| e.capital == c)
                && traj.terminal == c
        }
        Err(_) => false,
    }
}

/// Holds nothing.
#[derive(Debug, Clone, Default)]
pub struct Cash;

impl SimpleStrategy for Cash {
    fn bet_bound(&self) -> f64 {
        0.0
    }
    fn subscription(&self) -> Subscription {
        Subscription::default()
    }
    fn on_event(&mut self, _: &MarketEvent) -> Option<f64> {
        None
    }
    fn name(&self) -> String {
        "cash".into()
    }
}

/// Positions set at fixed times: `(t_i, h_i)` means hold `h_i` from `t_i`.
#[derive(Debug, Clone)]
pub struct ScheduledBets {
    plan: Vec<(f64, f64)>,
    next: usize,
}

impl ScheduledBets {
    pub fn new(mut plan: Vec<(f64, f64)>) -> Self {
        plan.sort_by(|a, b| a.0.total_cmp(&b.0));
        ScheduledBets { plan, next: 0 }
    }

    /// Hold `bet` from `t0` onwards.
    pub fn constant(bet: f64, t0: f64) -> Self {
        Self::new(vec![(t0, bet)])
    }

    /// Hold `bet` on `[t0, t1]` and nothing afterwards.
    pub fn hold_between(bet: f64, t0: f64, t1: f64) -> Self {
        Self::new(vec![(t0, bet), (t1, 0.0)])
    }
}

impl SimpleStrategy for ScheduledBets {
    fn bet_bound(&self) -> f64 {
        self.plan.iter().map(|p| p.1.abs()).fold(0.0, f64::max)
    }
    fn subscription(&self) -> Subscription {
        Subscription { scheduled: self.plan.iter().map(|p| p.0).collect(), ..Default::default() }
    }
    fn on_event(&mut self, ev: &MarketEvent) -> Option<f64> {
        let mut out = None;
        while self.next < self.plan.len() && self.plan[self.next].0 <= ev.time {
            out = Some(self.plan[self.next].1);
            self.next += 1;
        }
        out
    }
    fn name(&self) -> String {
        "scheduled".into()
    }
}

/// Pseudo-random position changes at crossings of one level and at
/// scheduled times; used to fuzz engine properties.
#[derive(Debug, Clone)]
pub struct FuzzStrategy {
    rng: crate::special::CounterRng,
    counter: u64,
    level: u32,
    times: Vec<f64>,
    bound: f64,
}

impl FuzzStrategy {
    pub fn new(seed: u64, level: u32, times: Vec<f64>, bound: f64) -> Self {
        FuzzStrategy { rng: crate::special::CounterRng::new(seed, 0xf022), counter: 0, level, times, bound }
    }
}

impl SimpleStrategy for FuzzStrategy {
    fn bet_bound(&self) -> f64 {
        self.bound
    }
    fn subscription(&self) -> Subscription {
        Subscription { levels: vec![self.level], samples: false, scheduled: self.times.clone() }
    }
    fn on_event(&mut self, _: &MarketEvent) -> Option<f64> {
        let u = self.rng.uniform(self.counter);
        let v = self.rng.uniform(self.counter + 1);
        self.counter += 2;
        (u < 0.7).then(|| self.bound * (2.0 * v - 1.0))
    }
    fn name(&self) -> String {
        "fuzz".into()
    }
}
