//! The level-`n` parity bettor.
//!
//! Crossings are grouped in pairs `(T_{kappa+2k-2}, T_{kappa+2k})` with
//! `kappa = 0` when `w(T_0)` lies on the coarser grid `D_{n-1}` and `kappa = 1`
//! otherwise. At the middle crossing it bets `-2^n` after an up-move and `+2^n`
//! after a down-move, then goes flat at the end of the pair. Each pair gains
//! `xi_k = +1` if the path came back to where it was two crossings earlier,
//! and loses 1 otherwise.

use super::{EventKind, MarketEvent, SimpleStrategy, Subscription};
use crate::crossings::grid_step;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParityBettor {
    n: u32,
    kappa: Option<usize>,
    /// Price at the start of the current pair.
    pair_start: f64,
    prev_price: f64,
    xis: Vec<i8>,
}

impl ParityBettor {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 || n > 60 {
            return Err(Error::domain(format!("parity bettor level {n} outside 1..=60")));
        }
        Ok(ParityBettor { n, kappa: None, pair_start: 0.0, prev_price: 0.0, xis: Vec::new() })
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    /// `kappa` once `T_0` has been seen.
    pub fn kappa(&self) -> Option<usize> {
        self.kappa
    }

    /// Completed pair outcomes `xi_1, xi_2, ...`.
    pub fn xis(&self) -> &[i8] {
        &self.xis
    }

    /// Position at crossing `index` given its price and the last two prices.
    /// Returns `(position, completed xi)`.
    pub(crate) fn step(&mut self, index: usize, price: f64) -> (f64, Option<i8>) {
        if index == 0 {
            let coarse = price / grid_step(self.n - 1);
            self.kappa = Some(if coarse == coarse.floor() { 0 } else { 1 });
        }
        let kappa = self.kappa.expect("T_0 precedes later crossings");
        let mut xi = None;
        let pos = if index < kappa {
            0.0
        } else {
            match (index - kappa) % 2 {
                0 => {
                    if index > kappa {
                        let v = if price == self.pair_start { 1 } else { -1 };
                        self.xis.push(v);
                        xi = Some(v);
                    }
                    self.pair_start = price;
                    0.0
                }
                _ => {
                    let scale = (self.n as f64).exp2();
                    if price > self.prev_price {
                        -scale
                    } else {
                        scale
                    }
                }
            }
        };
        self.prev_price = price;
        (pos, xi)
    }
}

impl SimpleStrategy for ParityBettor {
    fn bet_bound(&self) -> f64 {
        (self.n as f64).exp2()
    }

    fn subscription(&self) -> Subscription {
        Subscription { levels: vec![self.n], ..Default::default() }
    }

    fn on_event(&mut self, ev: &MarketEvent) -> Option<f64> {
        match ev.kind {
            EventKind::Crossing { level, index } if level == self.n => Some(self.step(index, ev.price).0),
            _ => None,
        }
    }

    fn name(&self) -> String {
        format!("parity(n={})", self.n)
    }
}
