//! Pricing and hedging smooth claims on the normalized path.
//!
//! A claim `F(psi) = U(psi(S/N), ..., psi(S))` is priced by the heat-smoothed
//! ladder
//!
//! `Ubar_i(x, D; x_1..x_i) = E U_{i+1}(x_1, ..., x_i, x + Z)`, `Z ~ N(0, D)`,
//! `U_i(x_1..x_i) = Ubar_i(x_i, S/N; x_1..x_i)`, `U_0 = Ubar_0(c, S/N)`.
//!
//! Expectations use Gauss-Hermite quadrature, derivatives in `x` use the
//! derivatives of the Gaussian kernel, and later stages are recomputed on the
//! realized prefix by nested quadrature, so a stage-`i` value costs
//! `Q^(N-i)` evaluations of `U`.
//!
//! The hedger trades at `t_{i,j} = tau_{iS/N + jS/(LN)}`: it holds
//! `dUbar/dx` and `1/2 d2Ubar/dx2` units of the quadratic replicator
//! restarted at `t_{i,j}`.

use crate::crossings::{grid_step, qv_ladder, qv_limit, resolution_floor_level, snap_offset};
use crate::error::{Error, Result};
use crate::paths::SampledPath;
use crate::special::CounterRng;
use crate::strategies::{
    run_capital_with, CapitalTrajectory, EngineOptions, EventKind, MarketEvent, SimpleStrategy, StopRule,
    Subscription,
};
use crate::timechange::{default_replicator_level, normalize};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default Gauss-Hermite order.
pub const DEFAULT_QUADRATURE: usize = 64;
/// Smallest accepted quadrature order.
pub const MIN_QUADRATURE: usize = 16;
/// Default margin above `U_0` as a fraction of `sup U`.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.05;
/// Cap on hedge positions; larger positions are treated as a fault.
pub const HEDGE_BET_CAP: f64 = 1e9;

/// Truncated Taylor series `sum c_k h^k`, `k <= 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Jet([f64; 5]);

impl Jet {
    fn constant(v: f64) -> Jet {
        Jet([v, 0.0, 0.0, 0.0, 0.0])
    }

    fn variable(v: f64) -> Jet {
        Jet([v, 1.0, 0.0, 0.0, 0.0])
    }

    fn add(self, o: Jet) -> Jet {
        let mut r = self.0;
        for (a, b) in r.iter_mut().zip(o.0) {
            *a += b;
        }
        Jet(r)
    }

    fn scale(self, k: f64) -> Jet {
        Jet(self.0.map(|v| v * k))
    }

    fn mul(self, o: Jet) -> Jet {
        let mut r = [0.0; 5];
        for (i, ri) in r.iter_mut().enumerate() {
            for j in 0..=i {
                *ri += self.0[j] * o.0[i - j];
            }
        }
        Jet(r)
    }

    fn exp(self) -> Jet {
        let f = self.0;
        let mut g = [f[0].exp(), 0.0, 0.0, 0.0, 0.0];
        for k in 1..5 {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * f[j] * g[k - j];
            }
            g[k] = acc / k as f64;
        }
        Jet(g)
    }

    fn recip(self) -> Jet {
        let f = self.0;
        let mut g = [1.0 / f[0], 0.0, 0.0, 0.0, 0.0];
        for k in 1..5 {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += f[j] * g[k - j];
            }
            g[k] = -acc / f[0];
        }
        Jet(g)
    }

    /// Derivatives `f, f', ..., f''''`.
    fn derivatives(self) -> [f64; 5] {
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        let mut d = self.0;
        for (v, k) in d.iter_mut().zip(fact) {
            *v *= k;
        }
        d
    }
}

/// Closed-form generators `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tag")]
pub enum ClaimKind {
    /// `U = value`.
    Constant { value: f64 },
    /// `U = sum_k coeffs[k] x_N^k` (test tag, unbounded).
    Polynomial { coeffs: Vec<f64> },
    /// `U = exp(-|x - center|^2 / (2 scale^2))` over all coordinates.
    Gaussian { center: f64, scale: f64 },
    /// `U = exp(1 - 1 / (1 - |x - center|^2 / radius^2))` inside the ball, 0 outside.
    Bump { center: f64, radius: f64 },
}

/// A claim on `N` equally spaced coordinates of the normalized path up to `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothClaim {
    pub n: usize,
    pub s: f64,
    pub kind: ClaimKind,
}

impl SmoothClaim {
    pub fn new(n: usize, s: f64, kind: ClaimKind) -> Result<Self> {
        let c = SmoothClaim { n, s, kind };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("claim needs at least one coordinate"));
        }
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::domain(format!("QV horizon S={} must be positive", self.s)));
        }
        match &self.kind {
            ClaimKind::Constant { value } if !value.is_finite() => Err(Error::domain("constant must be finite")),
            ClaimKind::Polynomial { coeffs } if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) => {
                Err(Error::domain("polynomial needs finite coefficients"))
            }
            ClaimKind::Gaussian { scale, center } if !(*scale > 0.0) || !center.is_finite() => {
                Err(Error::domain("gaussian scale must be positive"))
            }
            ClaimKind::Bump { radius, center } if !(*radius > 0.0) || !center.is_finite() => {
                Err(Error::domain("bump radius must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Monitoring step `S / N`.
    pub fn stage_length(&self) -> f64 {
        self.s / self.n as f64
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        match &self.kind {
            ClaimKind::Constant { value } => *value,
            ClaimKind::Polynomial { coeffs } => {
                let v = x[self.n - 1];
                coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
            }
            ClaimKind::Gaussian { center, scale } => {
                let r2: f64 = x.iter().map(|v| (v - center) * (v - center)).sum();
                (-r2 / (2.0 * scale * scale)).exp()
            }
            ClaimKind::Bump { center, radius } => {
                let q: f64 = x.iter().map(|v| (v - center) * (v - center)).sum::<f64>() / (radius * radius);
                if q >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - q)).exp()
                }
            }
        }
    }

    /// `U` and its first four partials in the last coordinate.
    pub fn jet(&self, x: &[f64]) -> [f64; 5] {
        let last = x[self.n - 1];
        let rest = &x[..self.n - 1];
        let j = match &self.kind {
            ClaimKind::Constant { value } => Jet::constant(*value),
            ClaimKind::Polynomial { coeffs } => {
                let v = Jet::variable(last);
                coeffs.iter().rev().fold(Jet::constant(0.0), |acc, c| acc.mul(v).add(Jet::constant(*c)))
            }
            ClaimKind::Gaussian { center, scale } => {
                let a: f64 = rest.iter().map(|v| (v - center) * (v - center)).sum();
                let d = Jet::variable(last - center);
                d.mul(d).add(Jet::constant(a)).scale(-1.0 / (2.0 * scale * scale)).exp()
            }
            ClaimKind::Bump { center, radius } => {
                let a: f64 = rest.iter().map(|v| (v - center) * (v - center)).sum();
                let d = Jet::variable(last - center);
                let q = d.mul(d).add(Jet::constant(a)).scale(1.0 / (radius * radius));
                if q.0[0] >= 1.0 {
                    Jet::constant(0.0)
                } else {
                    let inv = Jet::constant(1.0).add(q.scale(-1.0)).recip();
                    Jet::constant(1.0).add(inv.scale(-1.0)).exp()
                }
            }
        };
        j.derivatives()
    }

    /// `sup U`, infinite for unbounded test tags.
    pub fn sup(&self) -> f64 {
        match &self.kind {
            ClaimKind::Constant { value } => value.abs(),
            ClaimKind::Polynomial { coeffs } if coeffs.len() == 1 => coeffs[0].abs(),
            ClaimKind::Polynomial { .. } => f64::INFINITY,
            ClaimKind::Gaussian { .. } | ClaimKind::Bump { .. } => 1.0,
        }
    }

    /// Sufficient check for `U >= 0`.
    pub fn is_nonnegative(&self) -> bool {
        match &self.kind {
            ClaimKind::Constant { value } => *value >= 0.0,
            ClaimKind::Polynomial { coeffs } => {
                coeffs.iter().enumerate().all(|(k, c)| if k % 2 == 1 { *c == 0.0 } else { *c >= 0.0 })
            }
            ClaimKind::Gaussian { .. } | ClaimKind::Bump { .. } => true,
        }
    }

    /// Radius of the compact support, `None` for tags without one.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.kind {
            ClaimKind::Bump { radius, .. } => Some(*radius),
            _ => None,
        }
    }

    /// Half-width around `c` a pricing grid must cover.
    pub fn required_half_width(&self, c: f64) -> f64 {
        let spread = 6.0 * self.s.sqrt();
        match &self.kind {
            ClaimKind::Bump { center, radius } => (center - c).abs() + radius + spread,
            ClaimKind::Gaussian { center, scale } => (center - c).abs() + 6.0 * scale + spread,
            _ => spread,
        }
    }

    /// Default margin above `U_0`: 5% of `sup U`, or 0 when unbounded.
    pub fn default_margin(&self) -> f64 {
        let s = self.sup();
        if s.is_finite() {
            DEFAULT_MARGIN_FRACTION * s
        } else {
            0.0
        }
    }
}

/// Probabilists' Gauss-Hermite rule: `E f(Z) ~ sum p_k f(u_k)` for `Z ~ N(0,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(q: usize) -> Result<Self> {
        if q < MIN_QUADRATURE {
            return Err(Error::domain(format!("quadrature order {q} below {MIN_QUADRATURE}")));
        }
        if q > 300 {
            return Err(Error::domain(format!("quadrature order {q} too large")));
        }
        let (x, w) = hermite_rule(q);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        Ok(GaussHermite {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / sqrt_pi).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E f(x + sqrt(D) Z)`.
    pub fn expect(&self, x: f64, d: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        if d == 0.0 {
            return f(x);
        }
        let sd = d.sqrt();
        self.nodes.iter().zip(&self.weights).map(|(u, p)| p * f(x + sd * u)).sum()
    }

    /// `E f(x + sqrt(D) Z)` and its first two `x`-derivatives through the kernel.
    pub fn expect_jet(&self, x: f64, d: f64, mut f: impl FnMut(f64) -> f64) -> [f64; 3] {
        let sd = d.sqrt();
        let mut out = [0.0; 3];
        for (u, p) in self.nodes.iter().zip(&self.weights) {
            let v = p * f(x + sd * u);
            out[0] += v;
            out[1] += v * u / sd;
            out[2] += v * (u * u - 1.0) / d;
        }
        out
    }
}

/// Physicists' Hermite nodes and weights for `int e^{-x^2} f`, by Newton
/// iteration on the orthonormal recurrence.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0f64);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Evaluator of the heat-smoothed ladder for one claim.
#[derive(Debug, Clone)]
pub struct Pricer<'a> {
    claim: &'a SmoothClaim,
    gh: GaussHermite,
}

impl<'a> Pricer<'a> {
    pub fn new(claim: &'a SmoothClaim, q: usize) -> Result<Self> {
        claim.validate()?;
        Ok(Pricer { claim, gh: GaussHermite::new(q)? })
    }

    pub fn claim(&self) -> &SmoothClaim {
        self.claim
    }

    /// `U_{i+1}(prefix, y)` with `i = prefix.len()`.
    pub fn next_value(&self, prefix: &[f64], y: f64) -> f64 {
        let mut buf = Vec::with_capacity(self.claim.n);
        buf.extend_from_slice(prefix);
        self.next_value_buf(&mut buf, y)
    }

    fn next_value_buf(&self, buf: &mut Vec<f64>, y: f64) -> f64 {
        buf.push(y);
        let v = if buf.len() == self.claim.n {
            self.claim.eval(buf)
        } else {
            let d = self.claim.stage_length();
            self.gh.expect(y, d, |z| self.next_value_buf(buf, z))
        };
        buf.pop();
        v
    }

    fn check_prefix(&self, prefix: &[f64]) -> Result<()> {
        if prefix.len() >= self.claim.n {
            return Err(Error::domain(format!(
                "stage {} out of range for N={}",
                prefix.len(),
                self.claim.n
            )));
        }
        Ok(())
    }

    /// `Ubar_i(x, D; prefix)`.
    pub fn ubar(&self, prefix: &[f64], x: f64, d: f64) -> Result<f64> {
        self.check_prefix(prefix)?;
        if !(d >= 0.0) {
            return Err(Error::domain("variance D must be nonnegative"));
        }
        let mut buf = prefix.to_vec();
        Ok(self.gh.expect(x, d, |z| self.next_value_buf(&mut buf, z)))
    }

    /// `Ubar_i` and its first two `x`-derivatives at `(x, D; prefix)`.
    ///
    /// For `D > 0` derivatives come from the kernel; at `D = 0` only the last
    /// stage is supported, from the claim's analytic partials.
    pub fn ubar_jet(&self, prefix: &[f64], x: f64, d: f64) -> Result<[f64; 3]> {
        self.check_prefix(prefix)?;
        if d > 0.0 {
            let mut buf = prefix.to_vec();
            return Ok(self.gh.expect_jet(x, d, |z| self.next_value_buf(&mut buf, z)));
        }
        if d == 0.0 && prefix.len() + 1 == self.claim.n {
            let mut pt = prefix.to_vec();
            pt.push(x);
            let j = self.claim.jet(&pt);
            return Ok([j[0], j[1], j[2]]);
        }
        Err(Error::domain("derivatives at D=0 are only available on the last stage"))
    }

    /// `U_0 = Ubar_0(c, S/N)`, the Wiener price of the claim.
    pub fn price(&self, c: f64) -> f64 {
        let mut buf = Vec::with_capacity(self.claim.n);
        self.gh.expect(c, self.claim.stage_length(), |z| self.next_value_buf(&mut buf, z))
    }
}

/// `int F dW_c` by the iterated ladder.
pub fn wiener_price(claim: &SmoothClaim, c: f64, q: usize) -> Result<f64> {
    Ok(Pricer::new(claim, q)?.price(c))
}

/// Monte Carlo estimate of `int F dW_c`: `(mean, standard error)`.
pub fn wiener_price_mc(claim: &SmoothClaim, c: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    claim.validate()?;
    if samples < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    let rng = CounterRng::new(seed, 0x4d43);
    let sd = claim.stage_length().sqrt();
    let n = claim.n;
    let vals: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut x = Vec::with_capacity(n);
            let mut w = c;
            for i in 0..n {
                w += sd * rng.normal((k * n + i) as u64);
                x.push(w);
            }
            claim.eval(&x)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / samples as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (samples - 1) as f64;
    Ok((mean, (var / samples as f64).sqrt()))
}

/// Nodes and variance levels of a pricing grid, centred at `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub nodes: usize,
    pub d_levels: Vec<f64>,
}

impl GridSpec {
    /// Stage-0 grid covering the claim: 101 nodes and variance levels
    /// `k S/(32 N)`, starting at `k = 0` only when stage 0 is the last stage.
    pub fn for_claim(claim: &SmoothClaim, c: f64) -> Self {
        let dn = claim.stage_length();
        let first = if claim.n == 1 { 0 } else { 1 };
        GridSpec {
            half_width: claim.required_half_width(c),
            nodes: 101,
            d_levels: (first..=32).map(|k| dn * k as f64 / 32.0).collect(),
        }
    }
}

/// Stage-`i` ladder values on a grid, for one realized prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceLadder {
    pub stage: usize,
    pub prefix: Vec<f64>,
    pub quadrature: usize,
    pub x_grid: Vec<f64>,
    pub d_levels: Vec<f64>,
    /// `values[k][m] = Ubar(x_grid[m], d_levels[k])`.
    pub values: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    pub dxx: Vec<Vec<f64>>,
    /// `U_0` for stage 0, `U_i(prefix)` otherwise.
    pub price: f64,
}

/// Stage-0 ladder around `c`.
pub fn build_price_ladder(claim: &SmoothClaim, c: f64, grid: &GridSpec, q: usize) -> Result<PriceLadder> {
    build_stage_ladder(claim, &[], c, grid, q)
}

/// Ladder for the stage after `prefix`, centred at `center`.
pub fn build_stage_ladder(
    claim: &SmoothClaim,
    prefix: &[f64],
    center: f64,
    grid: &GridSpec,
    q: usize,
) -> Result<PriceLadder> {
    let pricer = Pricer::new(claim, q)?;
    pricer.check_prefix(prefix)?;
    let need = claim.required_half_width(center);
    if !(grid.half_width >= need) {
        return Err(Error::domain(format!(
            "grid half-width {} does not cover support plus 6 sqrt(S) = {need}",
            grid.half_width
        )));
    }
    if grid.nodes < 3 {
        return Err(Error::domain("grid needs at least 3 nodes"));
    }
    if grid.d_levels.is_empty() || grid.d_levels.windows(2).any(|w| w[1] <= w[0]) || grid.d_levels[0] < 0.0 {
        return Err(Error::domain("variance levels must be nonnegative and increasing"));
    }
    let last_stage = prefix.len() + 1 == claim.n;
    if grid.d_levels[0] == 0.0 && !last_stage {
        return Err(Error::domain("a D=0 level is only supported on the last stage"));
    }
    let step = 2.0 * grid.half_width / (grid.nodes - 1) as f64;
    let x_grid: Vec<f64> = (0..grid.nodes).map(|m| center - grid.half_width + m as f64 * step).collect();
    let rows: Vec<Vec<[f64; 3]>> = grid
        .d_levels
        .par_iter()
        .map(|&d| x_grid.iter().map(|&x| pricer.ubar_jet(prefix, x, d)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let pick = |k: usize| rows.iter().map(|r| r.iter().map(|j| j[k]).collect()).collect();
    let price = match prefix.last() {
        None => pricer.price(center),
        Some(&x) => pricer.ubar(prefix, x, claim.stage_length())?,
    };
    Ok(PriceLadder {
        stage: prefix.len(),
        prefix: prefix.to_vec(),
        quadrature: q,
        values: pick(0),
        dx: pick(1),
        dxx: pick(2),
        x_grid,
        d_levels: grid.d_levels.clone(),
        price,
    })
}

/// `max |dUbar/dD - 1/2 d2Ubar/dx2|` over interior `D`-levels, with the
/// `D`-derivative by centred differences.
pub fn heat_residual(ladder: &PriceLadder) -> Result<f64> {
    let d = &ladder.d_levels;
    if d.len() < 3 {
        return Err(Error::domain("heat residual needs at least 3 variance levels"));
    }
    let mut worst = 0.0f64;
    for k in 1..d.len() - 1 {
        let span = d[k + 1] - d[k - 1];
        for m in 0..ladder.x_grid.len() {
            let dd = (ladder.values[k + 1][m] - ladder.values[k - 1][m]) / span;
            worst = worst.max((dd - 0.5 * ladder.dxx[k][m]).abs());
        }
    }
    Ok(worst)
}

/// Knobs of the hedger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeOptions {
    /// Replicator level; default from [`default_replicator_level`].
    pub level: Option<u32>,
    /// Ladder level of the clock `tau`; defaults to the replicator level.
    pub clock_level: Option<u32>,
    pub quadrature: usize,
    /// Capital above `U_0`; default [`SmoothClaim::default_margin`].
    pub margin: Option<f64>,
}

impl Default for HedgeOptions {
    fn default() -> Self {
        HedgeOptions { level: None, clock_level: None, quadrature: DEFAULT_QUADRATURE, margin: None }
    }
}

/// Outcome of hedging one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub level: u32,
    pub level_capped: bool,
    pub clock_level: u32,
    pub u0: f64,
    pub margin: f64,
    pub initial_capital: f64,
    pub terminal: f64,
    /// `F(tc(w))` on the hedger's own clock.
    pub realized_claim: f64,
    /// `terminal - margin - F`.
    pub replication_error: f64,
    /// Whether the zero floor stopped the hedge.
    pub floor_bound: bool,
    /// `t_{i,0}` for `i = 0..=N`.
    pub stage_times: Vec<f64>,
    /// `w(tau_{iS/N})` for `i = 1..=N`.
    pub coordinates: Vec<f64>,
    /// `dUbar_i/dx` at each `t_{i,j}`.
    pub stage_positions: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trajectory: Option<CapitalTrajectory>,
}

struct Hedger<'a> {
    pricer: Pricer<'a>,
    l_steps: usize,
    level: u32,
    clock: u32,
    start: f64,
    // clock ladder state
    offset: f64,
    clock_moves: usize,
    clock_last: Option<(f64, f64)>,
    // trading state
    k_next: usize,
    prefix: Vec<f64>,
    anchor: Option<(f64, f64)>,
    jet: [f64; 3],
    done: bool,
    stage_times: Vec<f64>,
    positions: Vec<Vec<f64>>,
    fault: Option<Error>,
}

impl Hedger<'_> {
    fn clock_value(&self, t: f64, price: f64) -> f64 {
        match self.clock_last {
            None => (price - self.start) * (price - self.start),
            Some((tc, vc)) => {
                let q = grid_step(self.clock) * grid_step(self.clock);
                let partial = if tc == t { 0.0 } else { (price - vc) * (price - vc) };
                self.offset + self.clock_moves as f64 * q + partial
            }
        }
    }

    fn on_sample(&mut self, ev: &MarketEvent) -> Option<f64> {
        let a = self.clock_value(ev.time, ev.price);
        let claim = self.pricer.claim();
        let total = claim.n * self.l_steps;
        let ds = claim.s / total as f64;
        let mut fired = None;
        while !self.done && a >= self.k_next as f64 * ds {
            let k = self.k_next;
            self.k_next += 1;
            if k % self.l_steps == 0 {
                self.stage_times.push(ev.time);
                if k > 0 {
                    self.prefix.push(ev.price);
                }
            }
            if k == total {
                self.done = true;
            }
            fired = Some(k);
        }
        let k = fired?;
        if self.done {
            self.anchor = None;
            return Some(0.0);
        }
        let j = k % self.l_steps;
        let d = claim.stage_length() - j as f64 * ds;
        match self.pricer.ubar_jet(&self.prefix, ev.price, d) {
            Ok(jet) => self.jet = jet,
            Err(e) => {
                self.fault = Some(e);
                self.done = true;
                return Some(0.0);
            }
        }
        if j == 0 {
            self.positions.push(Vec::with_capacity(self.l_steps));
        }
        if let Some(p) = self.positions.last_mut() {
            p.push(self.jet[1]);
        }
        self.anchor = Some((ev.time, ev.price));
        Some(self.jet[1])
    }
}

impl SimpleStrategy for Hedger<'_> {
    fn bet_bound(&self) -> f64 {
        HEDGE_BET_CAP
    }

    fn subscription(&self) -> Subscription {
        let mut levels = vec![self.level, self.clock];
        levels.sort_unstable();
        levels.dedup();
        Subscription { levels, samples: true, scheduled: vec![] }
    }

    fn on_event(&mut self, ev: &MarketEvent) -> Option<f64> {
        match ev.kind {
            EventKind::Crossing { level, index } => {
                if level == self.clock {
                    if index == 0 {
                        self.offset = snap_offset((ev.price - self.start) * (ev.price - self.start), level);
                    } else {
                        self.clock_moves += 1;
                    }
                    self.clock_last = Some((ev.time, ev.price));
                }
                if level != self.level || self.done {
                    return None;
                }
                let (t0, x0) = self.anchor?;
                if ev.time <= t0 {
                    return None;
                }
                let pos = self.jet[1] + self.jet[2] * (ev.price - x0);
                Some(pos.clamp(-HEDGE_BET_CAP, HEDGE_BET_CAP))
            }
            EventKind::Sample { .. } => self.on_sample(ev),
            EventKind::Scheduled => None,
        }
    }

    fn name(&self) -> String {
        format!("lindeberg-hedge(L={}, l={})", self.l_steps, self.level)
    }
}

/// Hedge `claim` along `path` with `L` trades per stage, starting from `U_0 + margin`.
pub fn lindeberg_hedge(
    path: &SampledPath,
    claim: &SmoothClaim,
    l_steps: usize,
    opts: &HedgeOptions,
) -> Result<HedgeReport> {
    if l_steps == 0 {
        return Err(Error::domain("L must be at least 1"));
    }
    let pricer = Pricer::new(claim, opts.quadrature)?;
    let floor = resolution_floor_level(path);
    let (level, capped) = match opts.level {
        Some(l) => (l, false),
        None => default_replicator_level(l_steps, claim.n, claim.s, floor),
    };
    let clock = opts.clock_level.unwrap_or(level);
    let c = path.start_value();
    let a_end = qv_ladder(path, clock, path.horizon());
    if a_end < claim.s {
        return Err(Error::MissingQuadraticVariationHorizon { a_end, horizon: claim.s });
    }
    let u0 = pricer.price(c);
    let margin = opts.margin.unwrap_or_else(|| claim.default_margin());
    if !(margin >= 0.0) {
        return Err(Error::domain("margin must be nonnegative"));
    }
    let mut hedger = Hedger {
        pricer,
        l_steps,
        level,
        clock,
        start: c,
        offset: 0.0,
        clock_moves: 0,
        clock_last: None,
        k_next: 0,
        prefix: Vec::with_capacity(claim.n),
        anchor: None,
        jet: [0.0; 3],
        done: false,
        stage_times: Vec::with_capacity(claim.n + 1),
        positions: Vec::with_capacity(claim.n),
        fault: None,
    };
    let stop = if claim.is_nonnegative() { StopRule::AtZero } else { StopRule::None };
    let engine = EngineOptions { stop, ..Default::default() };
    let traj = run_capital_with(&mut hedger, path, u0 + margin, &[], engine)?;
    if let Some(e) = hedger.fault {
        return Err(e);
    }
    if !hedger.done {
        // stopped by the floor: read the remaining coordinates off the same clock
        let qv = qv_limit(path, clock, clock, path.times())?;
        let tc = normalize(path, &qv, claim.stage_length())?;
        hedger.stage_times = tc.tau_map[..=claim.n].to_vec();
        hedger.prefix = tc.values[1..=claim.n].to_vec();
    }
    let f = claim.eval(&hedger.prefix);
    let floor_bound = traj.stopped_at.is_some();
    Ok(HedgeReport {
        level,
        level_capped: capped,
        clock_level: clock,
        u0,
        margin,
        initial_capital: u0 + margin,
        terminal: traj.terminal,
        realized_claim: f,
        replication_error: traj.terminal - margin - f,
        floor_bound,
        stage_times: hedger.stage_times,
        coordinates: hedger.prefix,
        stage_positions: hedger.positions,
        trajectory: Some(traj),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::gen_brownian;
    use crate::timechange::normalize_path;

    fn poly(coeffs: &[f64]) -> SmoothClaim {
        SmoothClaim::new(1, 1.0, ClaimKind::Polynomial { coeffs: coeffs.to_vec() }).unwrap()
    }

    #[test]
    fn hermite_rule_moments() {
        for q in [16, 64, 128] {
            let gh = GaussHermite::new(q).unwrap();
            let m = |k: i32| gh.nodes.iter().zip(&gh.weights).map(|(u, p)| p * u.powi(k)).sum::<f64>();
            assert!((m(0) - 1.0).abs() < 1e-13, "q {q}");
            assert!(m(1).abs() < 1e-13);
            assert!((m(2) - 1.0).abs() < 1e-12);
            assert!((m(4) - 3.0).abs() < 1e-11);
            assert!((m(6) - 15.0).abs() < 1e-10);
        }
        assert!(GaussHermite::new(8).is_err());
    }

    #[test]
    fn jets_match_closed_forms() {
        let g = SmoothClaim::new(1, 1.0, ClaimKind::Gaussian { center: 0.0, scale: 1.0 }).unwrap();
        let x: f64 = 0.7;
        let e = (-x * x / 2.0).exp();
        let want = [e, -x * e, (x * x - 1.0) * e, (3.0 * x - x.powi(3)) * e, (x.powi(4) - 6.0 * x * x + 3.0) * e];
        for (a, b) in g.jet(&[x]).iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = poly(&[1.0, 2.0, 3.0]);
        assert_eq!(p.jet(&[2.0]), [17.0, 14.0, 6.0, 0.0, 0.0]);
        // bump derivatives against centred differences of the closed form
        let b = SmoothClaim::new(2, 1.0, ClaimKind::Bump { center: 0.0, radius: 2.0 }).unwrap();
        let at = |v: f64| b.eval(&[0.3, v]);
        let (x, h) = (0.9, 1e-4);
        let j = b.jet(&[0.3, x]);
        assert!((j[0] - at(x)).abs() < 1e-15);
        assert!((j[1] - (at(x + h) - at(x - h)) / (2.0 * h)).abs() < 1e-7);
        assert!((j[2] - (at(x + h) - 2.0 * at(x) + at(x - h)) / (h * h)).abs() < 1e-5);
        assert_eq!(b.jet(&[0.3, 2.5]), [0.0; 5]);
    }

    #[test]
    fn ladder_examples() {
        let sq = poly(&[0.0, 0.0, 1.0]);
        let pr = Pricer::new(&sq, 64).unwrap();
        for &(x, d) in &[(0.0, 0.5), (1.3, 0.2), (-2.0, 1.0)] {
            let j = pr.ubar_jet(&[], x, d).unwrap();
            assert!((j[0] - (x * x + d)).abs() < 1e-12);
            assert!((j[1] - 2.0 * x).abs() < 1e-11);
            assert!((j[2] - 2.0).abs() < 1e-10);
        }
        let g = SmoothClaim::new(1, 1.0, ClaimKind::Gaussian { center: 0.0, scale: 1.0 }).unwrap();
        let v = Pricer::new(&g, 64).unwrap().ubar(&[], 0.0, 1.0).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        // D = 0 is a point mass
        let bump = SmoothClaim::new(1, 1.0, ClaimKind::Bump { center: 0.0, radius: 2.0 }).unwrap();
        let lad = build_price_ladder(&bump, 0.0, &GridSpec::for_claim(&bump, 0.0), 64).unwrap();
        for (x, v) in lad.x_grid.iter().zip(&lad.values[0]) {
            assert_eq!(*v, bump.eval(&[*x]));
        }
    }

    #[test]
    fn wiener_price_examples() {
        assert!((wiener_price(&poly(&[1.0]), 0.3, 64).unwrap() - 1.0).abs() < 1e-13);
        assert!((wiener_price(&poly(&[0.0, 0.0, 1.0]), 0.0, 64).unwrap() - 1.0).abs() < 1e-12);
        let g = SmoothClaim::new(1, 1.0, ClaimKind::Gaussian { center: 0.0, scale: 1.0 }).unwrap();
        assert!((wiener_price(&g, 0.0, 64).unwrap() - 0.707_106_781_186_547_5).abs() < 1e-12);
        // two coordinates of x^2 in the last one: c^2 + S
        let sq2 = SmoothClaim::new(2, 1.5, ClaimKind::Polynomial { coeffs: vec![0.0, 0.0, 1.0] }).unwrap();
        assert!((wiener_price(&sq2, 0.5, 32).unwrap() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn price_matches_monte_carlo() {
        let b = SmoothClaim::new(2, 1.0, ClaimKind::Bump { center: 0.2, radius: 2.0 }).unwrap();
        let p = wiener_price(&b, 0.0, 64).unwrap();
        let (m, se) = wiener_price_mc(&b, 0.0, 100_000, 5).unwrap();
        assert!((p - m).abs() <= 3.0 * se, "{p} vs {m} +- {se}");
    }

    #[test]
    fn heat_residuals() {
        let lin = poly(&[0.0, 1.0]);
        let lad = build_price_ladder(&lin, 0.0, &GridSpec::for_claim(&lin, 0.0), 64).unwrap();
        assert!(heat_residual(&lad).unwrap() < 1e-12);
        let sq = poly(&[0.0, 0.0, 1.0]);
        let lad = build_price_ladder(&sq, 0.0, &GridSpec::for_claim(&sq, 0.0), 64).unwrap();
        assert!(heat_residual(&lad).unwrap() <= 1e-8);
        let bump = SmoothClaim::new(2, 1.0, ClaimKind::Bump { center: 0.0, radius: 3.0 }).unwrap();
        let mut spec = GridSpec::for_claim(&bump, 0.0);
        let lad = build_price_ladder(&bump, 0.0, &spec, 64).unwrap();
        assert!(heat_residual(&lad).unwrap() <= 1e-3 * bump.sup());
        spec.half_width = 1.0;
        assert!(build_price_ladder(&bump, 0.0, &spec, 64).is_err());
    }

    #[test]
    fn ladder_is_linear_and_towers() {
        let a = SmoothClaim::new(2, 1.0, ClaimKind::Bump { center: 0.0, radius: 2.0 }).unwrap();
        let b = SmoothClaim::new(2, 1.0, ClaimKind::Gaussian { center: 0.5, scale: 1.0 }).unwrap();
        let (pa, pb) = (Pricer::new(&a, 32).unwrap(), Pricer::new(&b, 32).unwrap());
        let gh = GaussHermite::new(32).unwrap();
        for &x in &[-1.0, 0.0, 0.8] {
            let u = pa.ubar(&[], x, 0.3).unwrap();
            let v = pb.ubar(&[], x, 0.3).unwrap();
            let mut buf = Vec::new();
            let comb = gh.expect(x, 0.3, |z| {
                2.0 * pa.next_value_buf(&mut buf, z) - 0.5 * pb.next_value_buf(&mut buf, z)
            });
            assert!((comb - (2.0 * u - 0.5 * v)).abs() < 1e-14);
        }
        // U_0 equals the stage-1 values integrated against N(c, S/N)
        let u0 = pa.price(0.1);
        let tower = gh.expect(0.1, 0.5, |y| pa.ubar(&[y], y, 0.5).unwrap());
        assert!((u0 - tower).abs() < 1e-14);
    }

    #[test]
    fn linear_claim_replicates_exactly() {
        let lin = poly(&[0.0, 1.0]);
        for seed in 0..5 {
            let p = gen_brownian(seed, 1.6, 1e-5, 0.2).unwrap();
            let r = lindeberg_hedge(&p, &lin, 16, &HedgeOptions::default()).unwrap();
            assert_eq!(r.margin, 0.0);
            assert!((r.terminal - r.realized_claim).abs() < 1e-12, "{} vs {}", r.terminal, r.realized_claim);
            assert!(r.stage_positions.iter().flatten().all(|h| (h - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn clock_matches_offline_normalization() {
        let p = gen_brownian(3, 1.6, 1e-5, 0.0).unwrap();
        let sq = SmoothClaim::new(2, 1.0, ClaimKind::Polynomial { coeffs: vec![0.0, 0.0, 1.0] }).unwrap();
        let opts = HedgeOptions { level: Some(5), ..Default::default() };
        let r = lindeberg_hedge(&p, &sq, 4, &opts).unwrap();
        let tc = normalize_path(&p, 0.5, Some(5)).unwrap();
        assert_eq!(r.stage_times, tc.tau_map[..3].to_vec());
        assert_eq!(r.coordinates, tc.values[1..3].to_vec());
    }

    #[test]
    fn missing_horizon_is_reported() {
        let p = gen_brownian(1, 0.3, 1e-4, 0.0).unwrap();
        let err = lindeberg_hedge(&p, &poly(&[0.0, 1.0]), 4, &HedgeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingQuadraticVariationHorizon { .. }));
    }
}
