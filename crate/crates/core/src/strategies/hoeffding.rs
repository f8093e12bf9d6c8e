//! Hoeffding's supercapital process and its use as a betting scale for the
//! parity bettor.
//!
//! In each round a forecaster announces `a < mu < b`, the sceptic bets `M`
//! per unit of capital on `x - mu`, and reality picks `x` in `[a, b]`. With
//! `M = (e^{h(b-mu)} - e^{h(a-mu)}) / (b - a) * exp(-h^2 (b-a)^2 / 8)` the
//! capital multiplier `1 + M (x - mu)` dominates
//! `exp(h (x - mu) - h^2 (b - a)^2 / 8)`.

use super::parity::ParityBettor;
use super::{EventKind, MarketEvent, SimpleStrategy, Subscription};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingRound {
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub x: f64,
}

impl HoeffdingRound {
    pub fn new(a: f64, b: f64, mu: f64, x: f64) -> Result<Self> {
        let r = HoeffdingRound { a, b, mu, x };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) {
            return Err(Error::domain(format!("need a < b, got a={} b={}", self.a, self.b)));
        }
        if !(self.a < self.mu && self.mu < self.b) {
            return Err(Error::domain(format!("mu={} outside ({}, {})", self.mu, self.a, self.b)));
        }
        if !(self.a <= self.x && self.x <= self.b) {
            return Err(Error::domain(format!("x={} outside [{}, {}]", self.x, self.a, self.b)));
        }
        Ok(())
    }
}

/// Bet per unit capital `M` on `x - mu`.
pub fn hoeffding_bet_fraction(h: f64, a: f64, b: f64, mu: f64) -> f64 {
    let w = b - a;
    // e^{h(b-mu)} - e^{h(a-mu)} = e^{h(a-mu)} (e^{hw} - 1)
    (h * (a - mu) - h * h * w * w / 8.0).exp() * (h * w).exp_m1() / w
}

/// One round: returns `(bet, capital_out)`.
pub fn hoeffding_step(h: f64, round: &HoeffdingRound, capital_in: f64) -> Result<(f64, f64)> {
    round.validate()?;
    if !(capital_in > 0.0) {
        return Err(Error::domain(format!("capital {capital_in} must be positive")));
    }
    let bet = hoeffding_bet_fraction(h, round.a, round.b, round.mu) * capital_in;
    Ok((bet, capital_in + bet * (round.x - round.mu)))
}

/// `prod_{n <= N} exp(h (x_n - mu_n) - h^2 (b_n - a_n)^2 / 8)` for each `N`.
pub fn hoeffding_process(h: f64, rounds: &[HoeffdingRound]) -> Result<Vec<f64>> {
    let mut log = 0.0;
    rounds
        .iter()
        .map(|r| {
            r.validate()?;
            let w = r.b - r.a;
            log += h * (r.x - r.mu) - h * h * w * w / 8.0;
            Ok(log.exp())
        })
        .collect()
}

/// Parity bettor at level `n` scaled so that each pair is a Hoeffding round
/// with `x = eta_k = 2^{-2n+1} xi_k`, `[a, b] = [-2^{-2n+1}, 2^{-2n+1}]`, `mu = 0`.
///
/// Capital stays positive: `|M| 2^{-2n+1} = sinh(y) e^{-y^2/2} < 1` with `y = |h| 2^{-2n+1}`.
#[derive(Debug, Clone)]
pub struct HoeffdingParity {
    inner: ParityBettor,
    n: u32,
    fraction: f64,
    capital: f64,
    pair_capital: f64,
    position: f64,
    last_price: f64,
    ceiling: f64,
}

impl HoeffdingParity {
    /// `h` is the Hoeffding exponent (its sign picks the side), `capital` the
    /// initial capital the engine will be started with.
    pub fn new(n: u32, h: f64, capital: f64) -> Result<Self> {
        let inner = ParityBettor::new(n)?;
        if !(capital > 0.0) {
            return Err(Error::domain("initial capital must be positive"));
        }
        let half_width = (1.0 - 2.0 * n as f64).exp2();
        let fraction = hoeffding_bet_fraction(h, -half_width, half_width, 0.0);
        Ok(HoeffdingParity {
            inner,
            n,
            fraction,
            capital,
            pair_capital: capital,
            position: 0.0,
            last_price: 0.0,
            ceiling: capital * 1e300_f64.sqrt(),
        })
    }

    /// Capital as tracked by the strategy itself.
    pub fn capital(&self) -> f64 {
        self.capital
    }

    pub fn xis(&self) -> &[i8] {
        self.inner.xis()
    }
}

impl SimpleStrategy for HoeffdingParity {
    fn bet_bound(&self) -> f64 {
        self.inner.bet_bound() * self.fraction.abs() * (1.0 - 2.0 * self.n as f64).exp2() * self.ceiling
    }

    fn subscription(&self) -> Subscription {
        self.inner.subscription()
    }

    fn on_event(&mut self, ev: &MarketEvent) -> Option<f64> {
        let EventKind::Crossing { level, index } = ev.kind else { return None };
        if level != self.n {
            return None;
        }
        if index > 0 {
            self.capital += self.position * (ev.price - self.last_price);
        }
        self.last_price = ev.price;
        let (parity_pos, _) = self.inner.step(index, ev.price);
        if parity_pos == 0.0 {
            self.pair_capital = self.capital;
            self.position = 0.0;
        } else {
            let scale = self.fraction * self.pair_capital * (1.0 - 2.0 * self.n as f64).exp2();
            self.position = parity_pos * scale;
        }
        Some(self.position)
    }

    fn name(&self) -> String {
        format!("hoeffding-parity(n={})", self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::gen_brownian;
    use crate::special::CounterRng;
    use crate::strategies::{run_capital, ParityBettor};

    #[test]
    fn step_examples() {
        let r = HoeffdingRound::new(-1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(hoeffding_step(0.0, &r, 2.0).unwrap(), (0.0, 2.0));
        // (e - 1/e)/2 * e^{-1/2} = sinh(1) e^{-1/2}, evaluated in extended precision
        let m = 0.712_795_555_275_849_1;
        assert!((hoeffding_bet_fraction(1.0, -1.0, 1.0, 0.0) - m).abs() < 1e-15);
        let (bet, out) = hoeffding_step(1.0, &r, 1.0).unwrap();
        assert!((bet - m).abs() < 1e-15);
        assert!((out - (1.0 + m)).abs() < 1e-15);
        assert!(out >= 0.5f64.exp());
    }

    #[test]
    fn step_rejects_bad_rounds() {
        assert!(HoeffdingRound::new(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(HoeffdingRound::new(-1.0, 1.0, 1.0, 0.0).is_err());
        let bad = HoeffdingRound { a: 0.0, b: 1.0, mu: 2.0, x: 0.5 };
        assert!(hoeffding_step(1.0, &bad, 1.0).is_err());
        let ok = HoeffdingRound::new(-1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(hoeffding_step(1.0, &ok, 0.0).is_err());
    }

    #[test]
    fn process_examples() {
        let r1 = HoeffdingRound::new(-1.0, 1.0, 0.0, 1.0).unwrap();
        let r2 = HoeffdingRound::new(-1.0, 1.0, 0.0, -1.0).unwrap();
        assert_eq!(hoeffding_process(0.0, &[r1, r2]).unwrap(), vec![1.0, 1.0]);
        let p = hoeffding_process(1.0, &[r1, r2]).unwrap();
        assert!((p[0] - 0.5f64.exp()).abs() < 1e-15);
        assert!((p[1] - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stepped_capital_dominates_process() {
        let rng = CounterRng::new(99, 1);
        let mut ctr = 0u64;
        let mut u = || {
            ctr += 1;
            rng.uniform(ctr)
        };
        for _ in 0..2000 {
            let h = 8.0 * u() - 4.0;
            let rounds: Vec<HoeffdingRound> = (0..10)
                .map(|_| {
                    let a = 4.0 * u() - 2.0;
                    let b = a + 0.01 + 2.0 * u();
                    let mu = a + (b - a) * u();
                    let x = a + (b - a) * u();
                    HoeffdingRound::new(a, b, mu, x).unwrap()
                })
                .collect();
            let proc_ = hoeffding_process(h, &rounds).unwrap();
            let mut cap = 1.0;
            for (r, p) in rounds.iter().zip(&proc_) {
                cap = hoeffding_step(h, r, cap).unwrap().1;
                assert!(cap >= p * (1.0 - 1e-12), "h={h} {cap} < {p}");
            }
        }
    }

    #[test]
    fn scaled_parity_matches_rounds() {
        let p = gen_brownian(21, 1.0, 1e-4, 0.0).unwrap();
        for n in 1..5 {
            for &sign in &[1.0, -1.0] {
                let h = sign * (n as f64).exp2();
                let mut s = HoeffdingParity::new(n, h, 0.5).unwrap();
                let t = run_capital(&mut s, &p, 0.5, &[1.0]).unwrap();
                // replay the rounds by hand
                let mut plain = ParityBettor::new(n).unwrap();
                run_capital(&mut plain, &p, 0.0, &[]).unwrap();
                let w = (1.0 - 2.0 * n as f64).exp2();
                let mut cap = 0.5;
                for xi in plain.xis() {
                    let r = HoeffdingRound::new(-w, w, 0.0, w * *xi as f64).unwrap();
                    cap = hoeffding_step(h, &r, cap).unwrap().1;
                }
                assert!((s.capital() - cap).abs() <= 1e-12 * cap, "n {n}: {} vs {cap}", s.capital());
                assert!(t.running_min > 0.0);
            }
        }
    }
}
