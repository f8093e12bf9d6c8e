//! Variation functionals of sampled paths: phi-variation over vertex
//! partitions (p-variation and Taylor's psi), the variation index from
//! crossing counts, qvar with a mesh constraint, and the time-change check
//! `qvar_T(w o f) = qvar_{f(T)}(w)`.
//!
//! Suprema over partitions are taken over a finite candidate set, so every
//! value here is a lower bound for the supremum over real-time partitions
//! (equal to it for piecewise-linear paths and convex `phi` such as `|u|^p`
//! with `p >= 1`).

use crate::crossings::{crossing_times, resolution_floor_level};
use crate::error::{Error, Result};
use crate::paths::{compose_time_change, SampledPath, TimeChange};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Candidate sets above this size are pruned to it.
pub const MAX_CANDIDATES: usize = 20_000;
/// Paths with at most this many vertices use every vertex as a candidate.
pub const ALL_VERTEX_LIMIT: usize = 4096;
/// Ratio of the last two refinement values above which divergence is flagged.
pub const DIVERGENCE_RATIO: f64 = 1.1;

fn ln_star(u: f64) -> f64 {
    u.ln().abs().max(1.0)
}

#[inline]
fn psi_raw(u: f64) -> f64 {
    // ln* ln* u = 1 exactly when e^{-e} <= u <= e^e
    const LO: f64 = 0.065_988_035_845_312_53; // e^{-e}
    const HI: f64 = 15.154_262_241_479_262; // e^{e}
    if u == 0.0 {
        0.0
    } else if (LO..=HI).contains(&u) {
        0.5 * u * u
    } else {
        u * u / (2.0 * ln_star(ln_star(u)))
    }
}

/// Taylor's function `psi(u) = u^2 / (2 ln* ln* u)` with `ln* u = max(1, |ln u|)`.
pub fn psi(u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::domain(format!("psi needs u >= 0, got {u}")));
    }
    Ok(psi_raw(u))
}

/// Gauge applied to increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Power(f64),
    TaylorPsi,
}

impl Phi {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Phi::Power(p) if p == 2.0 => u * u,
            Phi::Power(p) if p == 1.0 => u,
            Phi::Power(p) => u.powf(p),
            Phi::TaylorPsi => psi_raw(u),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Phi::Power(p) if !(p > 0.0) || !p.is_finite() => {
                Err(Error::domain(format!("power variation needs p > 0, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationResult {
    pub value: f64,
    /// Refinement suggests the supremum is infinite.
    pub infinite: bool,
    pub optimal_partition: Vec<f64>,
    /// `(parameter, value)`: refinement level for `var_phi`, `delta` for `qvar`.
    pub refinement_curve: Vec<(f64, f64)>,
    /// Schedule entries that were skipped as unresolvable.
    pub skipped: Vec<f64>,
    /// Largest swing removed when the candidate set was pruned.
    pub pruning_threshold: Option<f64>,
    pub candidates: usize,
    /// The value is a supremum over a finite candidate set, hence a lower bound.
    pub lower_bound: bool,
}

/// Path values on `[u, v]` with interpolated endpoints.
fn restrict(path: &SampledPath, u: f64, v: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ts = vec![u];
    ts.extend(path.times().iter().copied().filter(|&t| t > u && t < v));
    ts.push(v);
    let ys = path.eval_sorted(&ts);
    (ts, ys)
}

/// Endpoints plus strict local extrema (after merging equal neighbours).
fn extrema(ts: &[f64], ys: &[f64]) -> Vec<usize> {
    let n = ts.len();
    let mut keep = vec![0usize];
    let mut last_dir = 0i8;
    let mut last_idx = 0usize;
    for i in 1..n {
        let d = ys[i] - ys[last_idx];
        if d == 0.0 {
            continue;
        }
        let dir = if d > 0.0 { 1 } else { -1 };
        if last_dir != 0 && dir != last_dir && last_idx != 0 {
            keep.push(last_idx);
        }
        last_dir = dir;
        last_idx = i;
    }
    if *keep.last().unwrap() != n - 1 {
        keep.push(n - 1);
    }
    keep
}

#[derive(PartialEq)]
struct Swing(f64, usize, usize);
impl Eq for Swing {}
impl PartialOrd for Swing {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Swing {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on swing size, ties by position
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Remove adjacent interior extremum pairs with the smallest swing until at
/// most `limit` points remain. Returns kept indices and the largest removed swing.
fn prune(ys: &[f64], idx: Vec<usize>, limit: usize) -> (Vec<usize>, Option<f64>) {
    let m = idx.len();
    if m <= limit {
        return (idx, None);
    }
    let val: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let mut next: Vec<usize> = (1..=m).collect();
    let mut prev: Vec<usize> = (0..m).map(|i| i.wrapping_sub(1)).collect();
    let mut alive = vec![true; m];
    let mut heap = BinaryHeap::new();
    for i in 1..m.saturating_sub(2) {
        heap.push(Swing((val[i + 1] - val[i]).abs(), i, i + 1));
    }
    let mut remaining = m;
    let mut threshold = 0.0f64;
    while remaining > limit {
        let Some(Swing(s, i, j)) = heap.pop() else { break };
        if !alive[i] || !alive[j] || next[i] != j {
            continue;
        }
        alive[i] = false;
        alive[j] = false;
        threshold = threshold.max(s);
        let (a, b) = (prev[i], next[j]);
        next[a] = b;
        prev[b] = a;
        remaining -= 2;
        if a != 0 && b != m - 1 {
            heap.push(Swing((val[b] - val[a]).abs(), a, b));
        }
        let pa = prev[a];
        if a != 0 && pa != 0 {
            heap.push(Swing((val[a] - val[pa]).abs(), pa, a));
        }
        let nb = next[b];
        if b != m - 1 && nb != m - 1 {
            heap.push(Swing((val[nb] - val[b]).abs(), b, nb));
        }
    }
    let kept = (0..m).filter(|&k| alive[k]).map(|k| idx[k]).collect();
    (kept, Some(threshold))
}

/// `max sum phi(|y_{i_k} - y_{i_{k-1}}|)` over subsequences from the first to
/// the last point, with consecutive chosen times closer than `mesh`.
/// Returns the value and the chosen indices, or `None` if no such subsequence exists.
fn dp(ts: &[f64], ys: &[f64], phi: Phi, mesh: f64) -> Option<(f64, Vec<usize>)> {
    let m = ts.len();
    let mut best = vec![f64::NEG_INFINITY; m];
    let mut from = vec![usize::MAX; m];
    best[0] = 0.0;
    let mut lo = 0usize;
    for j in 1..m {
        while ts[j] - ts[lo] >= mesh {
            lo += 1;
        }
        let (yj, mut bj, mut fj) = (ys[j], f64::NEG_INFINITY, usize::MAX);
        for i in lo..j {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            let c = best[i] + phi.eval((yj - ys[i]).abs());
            if c > bj {
                bj = c;
                fj = i;
            }
        }
        best[j] = bj;
        from[j] = fj;
    }
    if best[m - 1] == f64::NEG_INFINITY {
        return None;
    }
    let mut chosen = vec![m - 1];
    while let Some(&k) = chosen.last() {
        if k == 0 {
            break;
        }
        chosen.push(from[k]);
    }
    chosen.reverse();
    Some((best[m - 1], chosen))
}

/// Options for [`var_phi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarPhiOptions {
    /// Refinement levels `j = 0..=max_refinement` add the points `u + k (v-u) 2^-j`.
    pub max_refinement: u32,
    pub max_candidates: usize,
}

impl Default for VarPhiOptions {
    fn default() -> Self {
        VarPhiOptions { max_refinement: 10, max_candidates: MAX_CANDIDATES }
    }
}

fn candidate_set(ts: &[f64], ys: &[f64], limit: usize) -> (Vec<usize>, Option<f64>) {
    if ts.len() <= ALL_VERTEX_LIMIT.min(limit) {
        return ((0..ts.len()).collect(), None);
    }
    prune(ys, extrema(ts, ys), limit)
}

/// phi-variation of `path` over `[u, v]`.
///
/// The returned value and partition come from vertex partitions; the
/// refinement curve adds dyadic points of `[u, v]` level by level and flags
/// divergence when the last step grows by more than [`DIVERGENCE_RATIO`].
pub fn var_phi(path: &SampledPath, phi: Phi, interval: (f64, f64), opts: VarPhiOptions) -> Result<VariationResult> {
    phi.validate()?;
    let (u, v) = interval;
    if !(u >= 0.0 && u < v && v <= path.horizon()) {
        return Err(Error::domain(format!("interval [{u}, {v}] not inside [0, {}]", path.horizon())));
    }
    let (ts, ys) = restrict(path, u, v);
    let (cand, threshold) = candidate_set(&ts, &ys, opts.max_candidates);
    let cts: Vec<f64> = cand.iter().map(|&i| ts[i]).collect();
    let cys: Vec<f64> = cand.iter().map(|&i| ys[i]).collect();
    let (value, chosen) = dp(&cts, &cys, phi, f64::INFINITY).expect("endpoints always connect");
    let optimal_partition = chosen.iter().map(|&k| cts[k]).collect();

    let mut curve = vec![(0.0, value)];
    for j in 1..=opts.max_refinement {
        let m = 1usize << j;
        let mut rts: Vec<f64> = (0..=m).map(|k| u + (v - u) * k as f64 / m as f64).collect();
        rts.extend_from_slice(&cts);
        rts.sort_by(f64::total_cmp);
        rts.dedup();
        rts[0] = u;
        *rts.last_mut().unwrap() = v;
        let rys = path.eval_sorted(&rts);
        let (rv, _) = dp(&rts, &rys, phi, f64::INFINITY).expect("endpoints always connect");
        curve.push((j as f64, rv));
    }
    let infinite = match curve.as_slice() {
        [.., (_, a), (_, b)] => *a > 0.0 && b / a > DIVERGENCE_RATIO,
        _ => false,
    };
    Ok(VariationResult {
        value,
        infinite,
        optimal_partition,
        refinement_curve: curve,
        skipped: Vec::new(),
        pruning_threshold: threshold,
        candidates: cts.len(),
        lower_bound: true,
    })
}

/// Exhaustive maximum over all vertex subsequences; exponential, for checks only.
pub fn var_phi_brute_force(path: &SampledPath, phi: Phi) -> f64 {
    let ys = path.values();
    let n = ys.len();
    assert!(n <= 20, "brute force is exponential");
    if n == 1 {
        return 0.0;
    }
    let interior = n - 2;
    let mut best = 0.0f64;
    for mask in 0u32..(1 << interior) {
        let mut sum = 0.0;
        let mut last = ys[0];
        for k in 0..interior {
            if mask & (1 << k) != 0 {
                sum += phi.eval((ys[k + 1] - last).abs());
                last = ys[k + 1];
            }
        }
        sum += phi.eval((ys[n - 1] - last).abs());
        best = best.max(sum);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationIndex {
    pub value: f64,
    pub levels: Vec<u32>,
    /// Completed moves of `D_n` inside the interval, per level.
    pub counts: Vec<usize>,
}

/// Variation index from the growth of crossing counts: the least-squares
/// slope of `log2 N_n` against `n` over levels with `N_n >= 2`.
///
/// `levels` defaults to `1..=floor`, with `floor` the resolution floor level
/// of the path. A path with no crossings at any level returns 0.
pub fn variation_index(path: &SampledPath, interval: (f64, f64), levels: Option<(u32, u32)>) -> Result<VariationIndex> {
    let (u, v) = interval;
    if !(u >= 0.0 && u < v && v <= path.horizon()) {
        return Err(Error::domain(format!("interval [{u}, {v}] not inside [0, {}]", path.horizon())));
    }
    let (lo, hi) = match levels {
        Some(r) => r,
        None => {
            let f = resolution_floor_level(path).ok_or_else(|| {
                Error::InsufficientResolution("sample spacing too coarse for any dyadic level".into())
            })?;
            (1, f.min(40))
        }
    };
    let (ts, ys) = restrict(path, u, v);
    let sub = SampledPath::new(ts.iter().map(|t| t - u).collect(), ys)?;
    let mut all_levels = Vec::new();
    let mut counts = Vec::new();
    for n in lo..=hi {
        all_levels.push(n);
        counts.push(crossing_times(&sub, n, sub.horizon()).moves());
    }
    if counts.iter().all(|&c| c == 0) {
        return Ok(VariationIndex { value: 0.0, levels: all_levels, counts });
    }
    let pts: Vec<(f64, f64)> = all_levels
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c >= 2)
        .map(|(&n, &c)| (n as f64, (c as f64).log2()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientResolution(format!(
            "only {} resolvable levels in {lo}..={hi}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(VariationIndex { value: sxy / sxx, levels: all_levels, counts })
}

/// Cross-check for the variation index: the smallest `p` in `p_grid` whose
/// `p`-variation over vertex partitions stops growing when the path is
/// sampled at every `2^k`-th vertex, `k = k_max, ..., 0`.
pub fn vi_crosscheck(path: &SampledPath, p_grid: &[f64], k_max: u32) -> Result<Option<f64>> {
    let n = path.len();
    for &p in p_grid {
        let mut values = Vec::new();
        for k in (0..=k_max).rev() {
            let step = 1usize << k;
            let idx: Vec<usize> = (0..n).step_by(step).chain(std::iter::once(n - 1)).collect();
            let mut idx = idx;
            idx.dedup();
            let sub = SampledPath::new(
                idx.iter().map(|&i| path.times()[i]).collect(),
                idx.iter().map(|&i| path.values()[i]).collect(),
            )?;
            let opts = VarPhiOptions { max_refinement: 0, ..Default::default() };
            values.push(var_phi(&sub, Phi::Power(p), (0.0, sub.horizon()), opts)?.value);
        }
        if let [.., a, b] = values.as_slice() {
            if *a > 0.0 && b / a <= DIVERGENCE_RATIO {
                return Ok(Some(p));
            }
        }
    }
    Ok(None)
}

/// Default mesh schedule `2^-j`, `j = 1, 2, ...`, down to twice the largest sample spacing.
pub fn default_delta_schedule(path: &SampledPath) -> Vec<f64> {
    let floor = 2.0 * path.max_spacing();
    (1..=60).map(|j| (-(j as f64)).exp2()).take_while(|&d| d >= floor).collect()
}

/// qvar over `[0, T]` for each mesh in `delta_schedule` (strictly decreasing).
///
/// For each `delta` the sum of `psi` over partitions of sample points with
/// mesh below `delta` is maximized exactly; the reported value is the one at
/// the smallest resolvable `delta`. Meshes below twice the largest sample
/// spacing are skipped and listed.
pub fn qvar(path: &SampledPath, t: f64, delta_schedule: &[f64]) -> Result<VariationResult> {
    if delta_schedule.windows(2).any(|w| !(w[1] < w[0])) || delta_schedule.is_empty() {
        return Err(Error::domain("delta schedule must be nonempty and strictly decreasing"));
    }
    if !(t >= 0.0) {
        return Err(Error::domain("T must be nonnegative"));
    }
    let empty = |skipped| VariationResult {
        value: 0.0,
        infinite: false,
        optimal_partition: vec![0.0, t],
        refinement_curve: delta_schedule.iter().map(|&d| (d, 0.0)).collect(),
        skipped,
        pruning_threshold: None,
        candidates: 2,
        lower_bound: true,
    };
    if t == 0.0 {
        return Ok(empty(Vec::new()));
    }
    let t = t.min(path.horizon());
    let (ts, ys) = restrict(path, 0.0, t);
    let spacing = ts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if ys.iter().all(|&y| y == ys[0]) {
        return Ok(empty(Vec::new()));
    }
    let mut curve = Vec::new();
    let mut skipped = Vec::new();
    let mut last: Option<(f64, Vec<usize>)> = None;
    for &delta in delta_schedule {
        if delta < 2.0 * spacing {
            skipped.push(delta);
            continue;
        }
        let (val, chosen) = dp(&ts, &ys, Phi::TaylorPsi, delta).expect("mesh above spacing connects");
        curve.push((delta, val));
        last = Some((val, chosen));
    }
    let Some((value, chosen)) = last else {
        return Err(Error::InsufficientResolution(format!(
            "every delta is below twice the sample spacing {spacing}"
        )));
    };
    Ok(VariationResult {
        value,
        infinite: false,
        optimal_partition: chosen.iter().map(|&k| ts[k]).collect(),
        refinement_curve: curve,
        skipped,
        pruning_threshold: None,
        candidates: ts.len(),
        lower_bound: true,
    })
}

/// `f^{-1}(y) = inf {t : f(t) >= y}` by bisection on `[0, hi]`.
fn inverse(f: &TimeChange, y: f64, hi: f64) -> f64 {
    match f {
        TimeChange::Identity => return y,
        TimeChange::Linear(r) if *r > 0.0 => return y / r,
        _ => {}
    }
    let (mut a, mut b) = (0.0, hi);
    if f.apply(a) >= y {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f.apply(mid) >= y {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}

/// `|qvar_T(w o f) - qvar_{f(T)}(w)|` at matched resolution.
///
/// The composed path is sampled at `f^{-1}` of the original vertices, and its
/// mesh schedule is the original one scaled by `T / f(T)`. Both sides use
/// the smallest resolvable mesh.
pub fn qvar_invariance_check(path: &SampledPath, f: &TimeChange, t: f64) -> Result<f64> {
    f.validate()?;
    let ft = f.apply(t);
    if ft > path.horizon() * (1.0 + 1e-12) {
        return Err(Error::domain(format!("f(T)={ft} beyond horizon {}", path.horizon())));
    }
    if ft == 0.0 {
        return Ok(0.0);
    }
    let ft = ft.min(path.horizon());
    let schedule = default_delta_schedule(&path.truncate(ft));
    if schedule.is_empty() {
        return Err(Error::InsufficientResolution("no resolvable mesh".into()));
    }
    let rhs = qvar(path, ft, &schedule)?;

    let mut grid: Vec<f64> = path
        .times()
        .iter()
        .take_while(|&&x| x < ft)
        .map(|&x| inverse(f, x, t))
        .collect();
    grid.push(t);
    grid.dedup();
    let composed = compose_time_change(path, f, &grid)?;
    let scale = t / ft;
    let lhs_schedule: Vec<f64> = schedule.iter().map(|d| d * scale).collect();
    let lhs = qvar(&composed, t, &lhs_schedule)?;
    Ok((lhs.value - rhs.value).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{gen_analytic, gen_brownian, AnalyticParams};
    use crate::special::CounterRng;
    use proptest::prelude::*;

    fn fixture(kind: &str) -> SampledPath {
        gen_analytic(kind, &AnalyticParams::default()).unwrap()
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(0.0).unwrap(), 0.0);
        assert_eq!(psi(1.0).unwrap(), 0.5);
        let e = std::f64::consts::E;
        assert!((psi(e).unwrap() - e * e / 2.0).abs() < 1e-15);
        assert!(psi(-1.0).is_err());
        // the fast path agrees with the definition
        for k in -400..400 {
            let u = (k as f64 / 40.0).exp();
            let direct = u * u / (2.0 * ln_star(ln_star(u)));
            assert!((psi_raw(u) - direct).abs() <= 1e-15 * direct, "u={u}");
            assert!(psi_raw(u) > 0.0);
        }
    }

    #[test]
    fn var_phi_examples() {
        let r = var_phi(&fixture("identity"), Phi::Power(2.0), (0.0, 1.0), Default::default()).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.optimal_partition, vec![0.0, 1.0]);
        assert!(!r.infinite);

        let r = var_phi(&fixture("zigzag"), Phi::Power(1.0), (0.0, 2.0), Default::default()).unwrap();
        assert_eq!(r.value, 2.0);

        let r = var_phi(&fixture("identity"), Phi::Power(0.5), (0.0, 1.0), Default::default()).unwrap();
        assert!(r.infinite);
        for &(j, v) in &r.refinement_curve {
            let m = j.exp2();
            assert!((v - m.sqrt()).abs() < 1e-9 * m, "j={j}: {v}");
        }
    }

    fn random_small_path(seed: u64, n: usize) -> SampledPath {
        let rng = CounterRng::new(seed, 3);
        let times = (0..n).map(|k| k as f64).collect();
        let values = (0..n).map(|k| rng.normal(k as u64)).collect();
        SampledPath::new(times, values).unwrap()
    }

    #[test]
    fn dp_equals_brute_force_on_small_paths() {
        for seed in 0..200 {
            let n = 2 + (seed as usize % 11);
            let p = random_small_path(seed, n);
            for phi in [Phi::Power(1.0), Phi::Power(1.5), Phi::Power(2.0), Phi::Power(0.7), Phi::TaylorPsi] {
                let opts = VarPhiOptions { max_refinement: 0, ..Default::default() };
                let dp_val = var_phi(&p, phi, (0.0, p.horizon()), opts).unwrap().value;
                assert_eq!(dp_val, var_phi_brute_force(&p, phi), "seed {seed} {phi:?}");
            }
        }
    }

    #[test]
    fn partition_recomputes_value() {
        let p = gen_brownian(3, 1.0, 1e-3, 0.0).unwrap();
        let r = var_phi(&p, Phi::Power(2.5), (0.0, 1.0), VarPhiOptions { max_refinement: 2, ..Default::default() })
            .unwrap();
        let ys = p.eval_sorted(&r.optimal_partition);
        let sum: f64 = ys.windows(2).map(|w| (w[1] - w[0]).abs().powf(2.5)).sum();
        assert!((sum - r.value).abs() <= 4.0 * f64::EPSILON * r.value);
    }

    #[test]
    fn pruning_keeps_large_swings() {
        let p = gen_brownian(8, 1.0, 1e-4, 0.0).unwrap();
        let opts = VarPhiOptions { max_refinement: 0, max_candidates: 500 };
        let pruned = var_phi(&p, Phi::Power(2.0), (0.0, 1.0), opts).unwrap();
        assert!(pruned.candidates <= 500);
        assert!(pruned.pruning_threshold.unwrap() > 0.0);
        let fuller = var_phi(&p, Phi::Power(2.0), (0.0, 1.0), VarPhiOptions { max_refinement: 0, max_candidates: 3000 })
            .unwrap();
        assert!(fuller.value >= pruned.value);
    }

    #[test]
    fn variation_index_examples() {
        let vi = variation_index(&fixture("identity"), (0.0, 1.0), Some((1, 10))).unwrap();
        assert!((vi.value - 1.0).abs() < 1e-12);
        let c = gen_analytic("constant", &AnalyticParams { value: 0.3, ..Default::default() }).unwrap();
        assert_eq!(variation_index(&c, (0.0, 1.0), Some((1, 10))).unwrap().value, 0.0);
        let b = gen_brownian(4, 1.0, 1e-5, 0.0).unwrap();
        let vi = variation_index(&b, (0.0, 1.0), None).unwrap();
        assert!((vi.value - 2.0).abs() < 0.4, "{}", vi.value);
        assert!(matches!(
            variation_index(&fixture("identity"), (0.0, 1.0), None),
            Err(Error::InsufficientResolution(_))
        ));
    }

    #[test]
    fn qvar_examples() {
        let c = gen_analytic("constant", &AnalyticParams { value: 0.3, points: 101, ..Default::default() }).unwrap();
        let r = qvar(&c, 1.0, &[0.5, 0.25]).unwrap();
        assert!(r.refinement_curve.iter().all(|&(_, v)| v == 0.0));

        // identity with 1024 pieces: m psi(1/m) shrinks with m
        let id = SampledPath::new(
            (0..=1024).map(|k| k as f64 / 1024.0).collect(),
            (0..=1024).map(|k| k as f64 / 1024.0).collect(),
        )
        .unwrap();
        let sched: Vec<f64> = (1..=9).map(|j| (-(j as f64)).exp2()).collect();
        let r = qvar(&id, 1.0, &sched).unwrap();
        assert!(r.refinement_curve.windows(2).all(|w| w[1].1 < w[0].1));
        assert!(r.value < 0.01);
        assert!(qvar(&id, 1.0, &[0.25, 0.5]).is_err());
        let r = qvar(&id, 1.0, &[0.25, 1e-4]).unwrap();
        assert_eq!(r.skipped, vec![1e-4]);
    }

    #[test]
    fn qvar_below_psi_variation() {
        let p = gen_brownian(12, 1.0, 1e-3, 0.0).unwrap();
        let q = qvar(&p, 1.0, &default_delta_schedule(&p)).unwrap();
        let v = var_phi(&p, Phi::TaylorPsi, (0.0, 1.0), VarPhiOptions { max_refinement: 0, ..Default::default() })
            .unwrap();
        assert!(q.value <= v.value);
    }

    #[test]
    fn invariance_examples() {
        let p = gen_brownian(2, 1.0, 1e-3, 0.0).unwrap();
        assert_eq!(qvar_invariance_check(&p, &TimeChange::Identity, 1.0).unwrap(), 0.0);
        assert_eq!(qvar_invariance_check(&p, &TimeChange::Zero, 1.0).unwrap(), 0.0);
        let d = qvar_invariance_check(&p, &TimeChange::Linear(2.0), 0.5).unwrap();
        assert!(d <= 0.1, "{d}");
    }

    proptest! {
        #[test]
        fn extra_candidates_never_decrease(seed in 0u64..500, n in 3usize..40) {
            let p = random_small_path(seed, n);
            let opts = VarPhiOptions { max_refinement: 0, ..Default::default() };
            let base = var_phi(&p, Phi::Power(2.0), (0.0, p.horizon()), opts).unwrap().value;
            let r = var_phi(&p, Phi::Power(2.0), (0.0, p.horizon()), VarPhiOptions { max_refinement: 3, ..opts }).unwrap();
            prop_assert!(r.refinement_curve.iter().all(|&(_, v)| v >= base));
        }
    }
}
