//! Shift graphs on a centered line of `N` nodes: connectivity, hop
//! distances, the minimum-hop bound and co-prime shift planning.
//!
//! Nodes are `V = {-⌊N/2⌋, …, N - ⌊N/2⌋ - 1}`; an edge joins `i` and
//! `i ± s` whenever both endpoints are in `V`.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extract::PhasorGrid;
use crate::field::{Grid, PhaseMap, ShiftSet, ShiftVector};
use crate::metrics::{error_vs_hop, pool_hop_bins, HopBin};
use crate::propagate::{propagate_bfs, AveragingMode};

/// Magnitudes scaled into the four-shift set, defined at `N = 512`.
pub const FOUR_SHIFT_PRESETS: [u64; 2] = [23, 31];
/// Magnitudes scaled into the eight-shift set, defined at `N = 512`.
pub const EIGHT_SHIFT_PRESETS: [u64; 6] = [21, 33, 11, 22, 13, 63];
const PRESET_SCALE_N: f64 = 512.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineGraph {
    n: usize,
    shifts: Vec<usize>,
}

impl LineGraph {
    /// Duplicate shifts collapse to one; zero shifts are rejected.
    pub fn new(n: usize, shifts: &[usize]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("line graph needs at least one node".into()));
        }
        if shifts.contains(&0) {
            return Err(Error::InvalidParameter("shift magnitudes must be positive".into()));
        }
        let mut shifts = shifts.to_vec();
        shifts.sort_unstable();
        shifts.dedup();
        Ok(Self { n, shifts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shifts(&self) -> &[usize] {
        &self.shifts
    }

    pub fn min_node(&self) -> i64 {
        -((self.n / 2) as i64)
    }

    pub fn max_node(&self) -> i64 {
        (self.n - self.n / 2) as i64 - 1
    }

    pub fn contains(&self, node: i64) -> bool {
        (self.min_node()..=self.max_node()).contains(&node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = i64> {
        self.min_node()..=self.max_node()
    }

    pub fn neighbors(&self, node: i64) -> impl Iterator<Item = i64> + '_ {
        self.shifts
            .iter()
            .flat_map(move |&s| [node + s as i64, node - s as i64])
            .filter(move |&v| self.contains(v))
    }

    fn index(&self, node: i64) -> usize {
        (node - self.min_node()) as usize
    }
}

/// Hop distance from the reference for every node; `None` is unreachable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMap {
    min_node: i64,
    hops: Vec<Option<u32>>,
}

impl HopMap {
    pub fn get(&self, node: i64) -> Option<u32> {
        let i = node - self.min_node;
        if i < 0 {
            return None;
        }
        self.hops.get(i as usize).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Option<u32>)> + '_ {
        self.hops.iter().enumerate().map(|(i, h)| (self.min_node + i as i64, *h))
    }

    pub fn as_slice(&self) -> &[Option<u32>] {
        &self.hops
    }

    /// Largest hop when every node is reachable.
    pub fn max_hop(&self) -> Option<u32> {
        if self.is_complete() {
            self.max_finite_hop()
        } else {
            None
        }
    }

    pub fn max_finite_hop(&self) -> Option<u32> {
        self.hops.iter().flatten().copied().max()
    }

    pub fn reachable(&self) -> usize {
        self.hops.iter().filter(|h| h.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.hops.iter().all(Option::is_some)
    }

    /// Number of nodes at each hop distance.
    pub fn histogram(&self) -> Vec<usize> {
        let mut out = vec![0; self.max_finite_hop().map_or(0, |h| h as usize + 1)];
        for h in self.hops.iter().flatten() {
            out[*h as usize] += 1;
        }
        out
    }
}

pub fn hop_distances(g: &LineGraph, reference: i64) -> Result<HopMap> {
    if !g.contains(reference) {
        return Err(Error::InvalidParameter(format!(
            "reference {reference} outside [{}, {}]",
            g.min_node(),
            g.max_node()
        )));
    }
    let n = g.n;
    let mut dist = vec![u32::MAX; n];
    let mut queue = Vec::with_capacity(n);
    let start = g.index(reference);
    dist[start] = 0;
    queue.push(start);
    let mut head = 0;
    while head < queue.len() {
        let u = queue[head];
        head += 1;
        let next = dist[u] + 1;
        for &s in &g.shifts {
            if u + s < n && dist[u + s] == u32::MAX {
                dist[u + s] = next;
                queue.push(u + s);
            }
            if u >= s && dist[u - s] == u32::MAX {
                dist[u - s] = next;
                queue.push(u - s);
            }
        }
    }
    Ok(HopMap {
        min_node: g.min_node(),
        hops: dist.into_iter().map(|d| (d != u32::MAX).then_some(d)).collect(),
    })
}

pub fn is_connected(g: &LineGraph, reference: i64) -> bool {
    hop_distances(g, reference).is_ok_and(|h| h.is_complete())
}

/// Max hop of `shifts` on `n` nodes from the centered origin; `None` when
/// some node is unreachable.
pub fn max_hop(n: usize, shifts: &[usize]) -> Result<Option<u32>> {
    let g = LineGraph::new(n, shifts)?;
    Ok(hop_distances(&g, 0)?.max_hop())
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Sufficient condition for connectivity: `gcd(s, t) = 1` and `s + t ≤ n`.
pub fn coprime_guarantee(s: u64, t: u64, n: u64) -> bool {
    gcd(s, t) == 1 && s.checked_add(t).is_some_and(|st| st <= n)
}

/// `{(p + i·s) mod k : i = 0..k-1}`.
pub fn residue_coverage(s: u64, k: u64, p: i64) -> BTreeSet<u64> {
    if k == 0 {
        return BTreeSet::new();
    }
    let k128 = k as i128;
    (0..k as i128)
        .map(|i| (p as i128 + i * s as i128).rem_euclid(k128) as u64)
        .collect()
}

fn ceil_isqrt(m: u64) -> u64 {
    let r = m.isqrt();
    if r * r == m {
        r
    } else {
        r + 1
    }
}

/// `⌈(-1 + √(2n - 1)) / 2⌉`, the fewest hops two shifts need to reach all
/// `n` nodes: `h` hops reach at most `2h² + 2h + 1` nodes.
pub fn hop_lower_bound(n: u64) -> Result<u32> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("hop bound needs n ≥ 2, got {n}")));
    }
    let m = n
        .checked_mul(2)
        .ok_or_else(|| Error::InvalidParameter(format!("n = {n} too large")))?
        - 1;
    // smallest h with 2h + 1 ≥ ⌈√m⌉
    Ok((ceil_isqrt(m) / 2) as u32)
}

/// `(⌊√(n/2)⌋, ⌊√(n/2)⌋ + 1)`.
pub fn optimal_pair(n: u64) -> Result<(u64, u64)> {
    if n < 8 {
        return Err(Error::InvalidParameter(format!("optimal pair needs n ≥ 8, got {n}")));
    }
    let s = (n / 2).isqrt();
    Ok((s, s + 1))
}

/// Chain of length-`(s+t)` intervals, each inside `V`, from one containing
/// `p` to one containing 0, moving one node at a time.
pub fn interval_chain(s: u64, t: u64, n: u64, p: i64) -> Result<Vec<(i64, i64)>> {
    let g = LineGraph::new(n as usize, &[1])?;
    if s == 0 || t == 0 || s + t > n {
        return Err(Error::InvalidParameter(format!("need 1 ≤ s, t and s + t ≤ n, got s={s} t={t} n={n}")));
    }
    if !g.contains(p) {
        return Err(Error::InvalidParameter(format!("node {p} outside the graph")));
    }
    let len = (s + t) as i64;
    let mut lo = p.min(g.max_node() - len + 1);
    let mut chain = vec![(lo, lo + len - 1)];
    while !(lo <= 0 && 0 <= lo + len - 1) {
        lo += if lo > 0 { -1 } else { 1 };
        chain.push((lo, lo + len - 1));
    }
    Ok(chain)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepNoise {
    /// Standard deviation of the Gaussian error added to every measured
    /// difference, in radians.
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub averaging: AveragingMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub t: u64,
    pub max_hop: Option<u32>,
    /// Mean absolute reconstruction error over nodes and trials; `None`
    /// without noise or when the pair leaves nodes unreachable.
    pub error: Option<f64>,
}

/// Every `t` in `1..n` paired with `s`, with its exact max hop and, when
/// `noise` is given, the Monte-Carlo propagation error.
pub fn pair_sweep(n: u64, s: u64, noise: Option<SweepNoise>) -> Result<Vec<SweepRow>> {
    if s == 0 || s >= n {
        return Err(Error::InvalidParameter(format!("need 1 ≤ s < n, got s={s} n={n}")));
    }
    (1..n)
        .into_par_iter()
        .map(|t| {
            let hop = max_hop(n as usize, &[s as usize, t as usize])?;
            let error = match (noise, hop) {
                (Some(cfg), Some(_)) => Some(line_error(n as usize, &[s, t], cfg)?),
                _ => None,
            };
            Ok(SweepRow { t, max_hop: hop, error })
        })
        .collect()
}

/// Mean absolute error of BFS propagation on a `1×n` line whose measured
/// differences carry i.i.d. Gaussian errors.
pub fn line_error(n: usize, shifts: &[u64], noise: SweepNoise) -> Result<f64> {
    Ok(line_stats(n, shifts, noise, noise.averaging)?.mean_error)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineStats {
    /// Mean absolute error over reached nodes and trials.
    pub mean_error: f64,
    /// Errors pooled by hop over all trials.
    pub per_hop: Vec<HopBin>,
    pub max_hop: Option<u32>,
}

impl LineStats {
    /// Mean error in the largest hop bin.
    pub fn final_hop_error(&self) -> Option<f64> {
        self.per_hop.last().map(|b| b.mean_error)
    }
}

/// Monte-Carlo errors on a `1×n` line from the centered reference, with
/// every trial drawing a fresh uniform phase and fresh difference noise.
pub fn line_stats(n: usize, shifts: &[u64], noise: SweepNoise, mode: AveragingMode) -> Result<LineStats> {
    if noise.trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let trials: Vec<(f64, usize, Vec<HopBin>, Option<u32>)> = (0..noise.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::noise::frame_seed(noise.seed, trial as u64, 0));
            line_trial(n, shifts, noise.sigma, mode, &mut rng)
        })
        .collect::<Result<_>>()?;
    let total: f64 = trials.iter().map(|t| t.0).sum();
    let count: usize = trials.iter().map(|t| t.1).sum();
    let bins: Vec<Vec<HopBin>> = trials.iter().map(|t| t.2.clone()).collect();
    Ok(LineStats {
        mean_error: if count == 0 { 0.0 } else { total / count as f64 },
        per_hop: pool_hop_bins(&bins),
        max_hop: trials[0].3,
    })
}

/// Noisy copy of the exact line phasors: each difference angle gets
/// `σ·N(0, 1)` added.
fn line_trial(n: usize, shifts: &[u64], sigma: f64, mode: AveragingMode, rng: &mut ChaCha8Rng) -> Result<(f64, usize, Vec<HopBin>, Option<u32>)> {
    let mut mags: Vec<i32> = shifts
        .iter()
        .map(|&s| i32::try_from(s).map_err(|_| Error::InvalidParameter(format!("shift {s} too large"))))
        .collect::<Result<_>>()?;
    mags.sort_unstable();
    mags.dedup();
    let set = ShiftSet::new(mags.iter().map(|&m| ShiftVector::horizontal(m)).collect::<Result<_>>()?)?;
    let truth = Grid::from_fn(1, n, |_, _| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let exact = PhasorGrid::from_phase(&truth, &set)?;
    let phasors = (0..set.len())
        .map(|k| {
            exact.phasor(k).map(|p| {
                let e: f64 = rng.sample(StandardNormal);
                p * Complex64::from_polar(1.0, sigma * e)
            })
        })
        .collect();
    let masks = (0..set.len()).map(|k| exact.mask(k).clone()).collect();
    let rel = (0..set.len()).map(|k| exact.reliability(k).clone()).collect();
    let noisy = PhasorGrid::new(set, phasors, masks, rel)?;
    let reference = (0, n / 2);
    let result = propagate_bfs(&noisy, reference, mode)?;
    let per_hop = error_vs_hop(&result.phasors, &PhaseMap::wrapped(truth)?, &result.hops)?;
    let sum = per_hop.iter().map(|b| b.mean_error * b.count as f64).sum();
    let count = per_hop.iter().map(|b| b.count).sum();
    let complete = result.unreached.data().iter().all(|u| !u);
    Ok((sum, count, per_hop, if complete { result.max_hop() } else { None }))
}

fn scale_preset(m: u64, n: usize) -> u64 {
    let scaled = (m as f64 * (n as f64 / PRESET_SCALE_N).sqrt()).round();
    (scaled as u64).max(1)
}

/// Axis-aligned shift set with `n_shifts ∈ {1, 2, 4, 8}` magnitudes, each
/// emitted horizontally and vertically. Presets are scaled by `√(N/512)`
/// with `N = min(H, W)`; a scaled value that collides moves to the next
/// unused magnitude.
pub fn plan_2d(height: usize, width: usize, n_shifts: usize) -> Result<ShiftSet> {
    let n = height.min(width);
    let mut mags: Vec<u64> = match n_shifts {
        1 => vec![1],
        2 | 4 | 8 => {
            let (s, t) = optimal_pair(n as u64)?;
            vec![s, t]
        }
        _ => {
            return Err(Error::InvalidParameter(format!(
                "shift count must be 1, 2, 4 or 8, got {n_shifts}"
            )))
        }
    };
    let presets: &[u64] = match n_shifts {
        4 => &FOUR_SHIFT_PRESETS,
        8 => &EIGHT_SHIFT_PRESETS,
        _ => &[],
    };
    for &p in presets {
        let mut m = scale_preset(p, n);
        while mags.contains(&m) {
            m += 1;
        }
        mags.push(m);
    }
    if let Some(&m) = mags.iter().find(|&&m| m as usize >= n) {
        return Err(Error::InvalidShift {
            dy: m as i64,
            dx: m as i64,
            reason: format!("magnitude does not fit a {height}x{width} grid"),
        });
    }
    let mags: Vec<u32> = mags.into_iter().map(|m| m as u32).collect();
    ShiftSet::axis_pairs(&mags)
}

/// Max 2D hop of an axis-aligned set from the centered origin: the sum of
/// the per-axis line diameters. `None` when either axis is disconnected.
pub fn max_hop_2d(height: usize, width: usize, shifts: &ShiftSet) -> Result<Option<u32>> {
    let m = shifts.axis_magnitudes();
    let axis = |n: usize, mags: &[u32]| -> Result<Option<u32>> {
        if n == 1 {
            return Ok(Some(0));
        }
        if mags.is_empty() {
            return Ok(None);
        }
        let mags: Vec<usize> = mags.iter().map(|&x| x as usize).collect();
        max_hop(n, &mags)
    };
    if !shifts.is_axis_aligned() {
        return Err(Error::InvalidParameter("max_hop_2d needs axis-aligned shifts".into()));
    }
    Ok(match (axis(height, &m.vertical)?, axis(width, &m.horizontal)?) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    })
}

/// Failures found by one of the exhaustive or randomized theory checks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TheoryCheck {
    pub cases: u64,
    pub failures: Vec<String>,
}

impl TheoryCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn collect(results: Vec<Option<String>>) -> Self {
        let cases = results.len() as u64;
        let failures = results.into_iter().flatten().collect();
        Self { cases, failures }
    }
}

/// Max hop of `optimal_pair(n)` equals `hop_lower_bound(n)` for every `n`.
pub fn check_optimal_pairs(ns: std::ops::RangeInclusive<u64>) -> TheoryCheck {
    let results = ns
        .into_par_iter()
        .map(|n| {
            let run = || -> Result<Option<String>> {
                let (s, t) = optimal_pair(n)?;
                let bound = hop_lower_bound(n)?;
                let hop = max_hop(n as usize, &[s as usize, t as usize])?;
                Ok((hop != Some(bound)).then(|| format!("n={n} ({s},{t}): max hop {hop:?}, bound {bound}")))
            };
            run().unwrap_or_else(|e| Some(format!("n={n}: {e}")))
        })
        .collect();
    TheoryCheck::collect(results)
}

fn check_connected(n: u64, s: u64, t: u64) -> Option<String> {
    match LineGraph::new(n as usize, &[s as usize, t as usize]) {
        Ok(g) if is_connected(&g, 0) => None,
        Ok(_) => Some(format!("n={n} ({s},{t}) disconnected")),
        Err(e) => Some(format!("n={n} ({s},{t}): {e}")),
    }
}

/// Every co-prime `(s, t)` with `s ≤ t`, `s + t ≤ n` connects the line,
/// for all `n ≤ max_n`.
pub fn check_coprime_exhaustive(max_n: u64) -> TheoryCheck {
    let results = (2..=max_n)
        .into_par_iter()
        .flat_map_iter(|n| {
            (1..n).flat_map(move |s| (s..=n - s).filter(move |&t| gcd(s, t) == 1).map(move |t| check_connected(n, s, t)))
        })
        .collect();
    TheoryCheck::collect(results)
}

/// Random co-prime pairs with `s + t ≤ n ≤ max_n`.
pub fn check_coprime_random(cases: usize, max_n: u64, seed: u64) -> TheoryCheck {
    let results = (0..cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::noise::frame_seed(seed, i as u64, 1));
            loop {
                let n = rng.random_range(2..=max_n);
                let s = rng.random_range(1..n);
                let t = rng.random_range(1..=n - s);
                if gcd(s, t) == 1 {
                    return check_connected(n, s, t);
                }
            }
        })
        .collect();
    TheoryCheck::collect(results)
}

/// `{p + i·s mod k}` covers all residues exactly when `gcd(s, k) = 1`, for
/// `1 ≤ s, k ≤ max` and a few offsets `p`.
pub fn check_residue_coverage(max: u64) -> TheoryCheck {
    let results = (1..=max)
        .into_par_iter()
        .flat_map_iter(|s| {
            (1..=max).flat_map(move |k| {
                [0i64, 1, -7, 1000].into_iter().map(move |p| {
                    let full = residue_coverage(s, k, p).len() as u64 == k;
                    (full != (gcd(s, k) == 1)).then(|| format!("s={s} k={k} p={p}: full={full}"))
                })
            })
        })
        .collect();
    TheoryCheck::collect(results)
}

/// Random pairs never beat the hop bound; a disconnected pair counts as
/// an infinite max hop.
pub fn check_lower_bound_random(cases: usize, max_n: u64, seed: u64) -> TheoryCheck {
    let results = (0..cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::noise::frame_seed(seed, i as u64, 2));
            let n = rng.random_range(2..=max_n);
            let s = rng.random_range(1..n);
            let t = rng.random_range(1..n);
            let run = || -> Result<Option<String>> {
                let bound = hop_lower_bound(n)?;
                Ok(match max_hop(n as usize, &[s as usize, t as usize])? {
                    Some(h) if h < bound => Some(format!("n={n} ({s},{t}): max hop {h} < bound {bound}")),
                    _ => None,
                })
            };
            run().unwrap_or_else(|e| Some(format!("n={n} ({s},{t}): {e}")))
        })
        .collect();
    TheoryCheck::collect(results)
}
