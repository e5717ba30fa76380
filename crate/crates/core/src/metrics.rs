//! Phase error after global phase correction, per-hop error tables and
//! rank statistics.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{wrap_phase, Grid, Mask, PhaseMap};

pub use crate::noise::empirical_snr;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HopBin {
    pub hop: u32,
    pub mean_error: f64,
    /// Population standard deviation of the absolute errors in the bin.
    pub std: f64,
    pub count: usize,
}

impl HopBin {
    fn from_sums(hop: usize, sum: f64, sum_sq: f64, count: usize) -> Self {
        let mean = sum / count as f64;
        Self {
            hop: hop as u32,
            mean_error: mean,
            std: (sum_sq / count as f64 - mean * mean).max(0.0).sqrt(),
            count,
        }
    }

    /// `std / √count`.
    pub fn standard_error(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    /// Mean absolute wrapped error after removing `offset`, in `[0, π]`.
    pub mean_abs_error: f64,
    pub std: f64,
    /// Global offset `angle(Σ p̂ conj(p_gt))`.
    pub offset: f64,
    pub count: usize,
    pub per_hop: Vec<HopBin>,
    pub achieved_snr_db: Option<f64>,
}

fn check_shape<A, B>(a: &Grid<A>, b: &Grid<B>) -> Result<()> {
    a.ensure_same_shape(b)
}

/// Circular-mean offset and the absolute errors left after removing it.
fn corrected_errors(estimate: &Grid<Complex64>, truth: &Grid<Complex64>, pick: impl Fn(usize) -> bool) -> Option<(f64, Vec<f64>)> {
    let mut sum = Complex64::default();
    let mut any = false;
    for i in 0..estimate.len() {
        if pick(i) {
            sum += estimate.data()[i] * truth.data()[i].conj();
            any = true;
        }
    }
    if !any {
        return None;
    }
    let theta = sum.arg();
    let rot = Complex64::from_polar(1.0, -theta);
    let errors = (0..estimate.len())
        .filter(|&i| pick(i))
        .map(|i| (estimate.data()[i] * truth.data()[i].conj() * rot).arg().abs())
        .collect();
    Some((theta, errors))
}

/// Error of estimated phasors against a truth phase over `mask` (all
/// pixels when `None`). Only the angle of each estimate matters.
pub fn phase_error(estimate: &Grid<Complex64>, truth: &PhaseMap, mask: Option<&Mask>) -> Result<ErrorReport> {
    check_shape(estimate, truth.grid())?;
    if let Some(m) = mask {
        check_shape(estimate, m)?;
    }
    let gt = truth.phasors();
    let (offset, errors) =
        corrected_errors(estimate, &gt, |i| mask.is_none_or(|m| m.data()[i])).ok_or(Error::EmptyMask)?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(ErrorReport {
        mean_abs_error: mean,
        std: var.sqrt(),
        offset,
        count: errors.len(),
        per_hop: Vec::new(),
        achieved_snr_db: None,
    })
}

pub fn phase_map_error(estimate: &PhaseMap, truth: &PhaseMap, mask: Option<&Mask>) -> Result<ErrorReport> {
    phase_error(&estimate.phasors(), truth, mask)
}

/// Mean absolute error per hop over reached pixels, with the offset taken
/// from the hop-0 pixels so the reference bin is exactly zero.
pub fn error_vs_hop(estimate: &Grid<Complex64>, truth: &PhaseMap, hops: &Grid<Option<u32>>) -> Result<Vec<HopBin>> {
    check_shape(estimate, truth.grid())?;
    check_shape(estimate, hops)?;
    let gt = truth.phasors();
    let Some((theta, _)) = corrected_errors(estimate, &gt, |i| hops.data()[i] == Some(0)) else {
        return Ok(Vec::new());
    };
    let rot = Complex64::from_polar(1.0, -theta);
    let max = hops.data().iter().flatten().copied().max().unwrap_or(0) as usize;
    let mut sums = vec![0.0; max + 1];
    let mut squares = vec![0.0; max + 1];
    let mut counts = vec![0usize; max + 1];
    for i in 0..estimate.len() {
        if let Some(h) = hops.data()[i] {
            let e = if h == 0 {
                0.0
            } else {
                wrap_phase((estimate.data()[i] * gt.data()[i].conj() * rot).arg()).abs()
            };
            sums[h as usize] += e;
            squares[h as usize] += e * e;
            counts[h as usize] += 1;
        }
    }
    Ok((0..=max)
        .filter(|&h| counts[h] > 0)
        .map(|h| HopBin::from_sums(h, sums[h], squares[h], counts[h]))
        .collect())
}

/// Count-weighted merge of per-hop tables, e.g. across trials.
pub fn pool_hop_bins(tables: &[Vec<HopBin>]) -> Vec<HopBin> {
    let max = tables.iter().flatten().map(|b| b.hop).max().unwrap_or(0) as usize;
    let mut sums = vec![0.0; max + 1];
    let mut squares = vec![0.0; max + 1];
    let mut counts = vec![0usize; max + 1];
    for b in tables.iter().flatten() {
        let n = b.count as f64;
        sums[b.hop as usize] += b.mean_error * n;
        squares[b.hop as usize] += n * (b.std * b.std + b.mean_error * b.mean_error);
        counts[b.hop as usize] += b.count;
    }
    (0..=max)
        .filter(|&h| counts[h] > 0)
        .map(|h| HopBin::from_sums(h, sums[h], squares[h], counts[h]))
        .collect()
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// `10 log10` SNR over matching frame lists.
pub fn stack_snr(clean: &[&Grid<f64>], noisy: &[&Grid<f64>]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::InvalidParameter("frame lists differ in length".into()));
    }
    let mut c = Vec::new();
    let mut n = Vec::new();
    for (a, b) in clean.iter().zip(noisy) {
        a.ensure_same_shape(b)?;
        c.extend_from_slice(a.data());
        n.extend_from_slice(b.data());
    }
    Ok(empirical_snr(&c, &n))
}
