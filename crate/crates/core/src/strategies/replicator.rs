//! The quadratic replicator: a simple strategy whose capital is
//! `(w(t) - w(tau))^2 - A^{l,tau}_t`.
//!
//! It holds nothing until the first level-`l` crossing strictly after `tau`,
//! then holds `2 (w(T_k) - w(tau))` from each later crossing `T_k`. The ladder
//! `A^{l,tau}` is the global level-`l` ladder restarted at `tau`: squared
//! displacement up to that first crossing, `4^-l` per further crossing, and
//! the squared distance from the last crossing.

use super::{EventKind, MarketEvent, SimpleStrategy, Subscription};
use crate::crossings::{crossing_times, grid_step};
use crate::paths::SampledPath;

/// Direct formula for the replicator's capital at `t` (zero for `t <= tau`).
pub fn quadratic_replicator(path: &SampledPath, l: u32, tau_start: f64, t: f64) -> f64 {
    if t <= tau_start {
        return 0.0;
    }
    let ladder = crossing_times(path, l, t.min(path.horizon()));
    let first = ladder.crossing_times.partition_point(|&x| x <= tau_start);
    let last = ladder.crossing_times.partition_point(|&x| x <= t);
    let w_tau = path.at(tau_start);
    let w_t = path.at(t);
    let x = w_t - w_tau;
    if first >= last {
        return 0.0;
    }
    let d0 = ladder.crossing_values[first] - w_tau;
    let partial = if ladder.crossing_times[last - 1] == t {
        0.0
    } else {
        let d = w_t - ladder.crossing_values[last - 1];
        d * d
    };
    let q = grid_step(l) * grid_step(l);
    let a = d0 * d0 + (last - 1 - first) as f64 * q + partial;
    x * x - a
}

#[derive(Debug, Clone)]
pub struct QuadraticReplicator {
    l: u32,
    tau: f64,
    start_price: Option<f64>,
    bound: f64,
}

impl QuadraticReplicator {
    /// `max_move` bounds `|w(t) - w(tau)|` over the run; it sets the declared bet bound.
    pub fn new(l: u32, tau: f64, max_move: f64) -> Self {
        QuadraticReplicator { l, tau, start_price: None, bound: 2.0 * max_move.abs() + 2.0 * grid_step(l) }
    }
}

impl SimpleStrategy for QuadraticReplicator {
    fn bet_bound(&self) -> f64 {
        self.bound
    }

    fn subscription(&self) -> Subscription {
        Subscription { levels: vec![self.l], samples: false, scheduled: vec![self.tau] }
    }

    fn on_event(&mut self, ev: &MarketEvent) -> Option<f64> {
        match ev.kind {
            EventKind::Scheduled if ev.time == self.tau => {
                self.start_price = Some(ev.price);
                None
            }
            EventKind::Crossing { level, .. } if level == self.l && ev.time > self.tau => {
                let p0 = self.start_price?;
                Some(2.0 * (ev.price - p0))
            }
            _ => None,
        }
    }

    fn name(&self) -> String {
        format!("quadratic-replicator(l={}, tau={})", self.l, self.tau)
    }
}
