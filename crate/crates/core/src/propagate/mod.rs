//! Phasor propagation over the pixel graph formed by the valid phase
//! differences, from a reference pixel of zero phase.
//!
//! An edge of shift `Δ` joins `i` and `i + Δ` wherever `p_Δ(i)` is valid.
//! Walking it forward multiplies by `conj(p_Δ(i))`, walking it backward by
//! `p_Δ(i)`. The first arrival at a pixel fixes its hop count; later
//! arrivals at the same hop are averaged and longer ones are dropped.

use std::collections::VecDeque;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::PhasorGrid;
use crate::field::{srwf, Grid, Mask, PhaseMap, ShiftVector};

mod wavefront;

pub use wavefront::propagate_wavefront;

const DEGENERATE_MEAN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    /// Complex mean over all equal-hop arrivals.
    #[default]
    Mean,
    /// `p ← (p + p') / 2` per arrival, in queue order.
    Pairwise,
    /// First arrival only.
    Off,
}

impl AveragingMode {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mean" => Ok(Self::Mean),
            "pairwise" => Ok(Self::Pairwise),
            "off" => Ok(Self::Off),
            other => Err(Error::InvalidParameter(format!("unknown averaging mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    /// Wrapped angle of `phasors`; zero at unreached pixels.
    pub phase: PhaseMap,
    /// Propagated phasors, not renormalized; zero at unreached pixels.
    pub phasors: Grid<Complex64>,
    pub hops: Grid<Option<u32>>,
    pub unreached: Mask,
    pub reference: (usize, usize),
    /// Number of expansion rounds, equal to the largest hop.
    pub iterations: u32,
}

impl PropagationResult {
    pub fn max_hop(&self) -> Option<u32> {
        self.hops.data().iter().flatten().copied().max()
    }

    pub fn reached(&self) -> usize {
        self.unreached.data().iter().filter(|u| !**u).count()
    }

    /// `phase.srwf`, `hops.srwf` (unreached as -1) and `mask.srwf`
    /// (1 where reached).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        srwf::write_real(dir.join("phase.srwf"), self.phase.grid())?;
        srwf::write_real(
            dir.join("hops.srwf"),
            &self.hops.map(|h| h.map_or(-1.0, |h| h as f64)),
        )?;
        srwf::write_mask(dir.join("mask.srwf"), &self.unreached.map(|u| !u))?;
        Ok(())
    }
}

/// Complex mean, falling back to the first element when the mean
/// magnitude drops below `1e-12`.
pub fn average_phasors(phasors: &[Complex64]) -> Option<Complex64> {
    let first = *phasors.first()?;
    let mean = phasors.iter().sum::<Complex64>() / phasors.len() as f64;
    Some(if mean.norm() < DEGENERATE_MEAN { first } else { mean })
}

/// One directed edge out of `src`: target pixel and the factor applied.
#[derive(Clone, Copy)]
pub(crate) struct Arrival {
    pub target: usize,
    pub factor: Complex64,
}

/// Precomputed edge structure shared by both engines. Outgoing edges of a
/// pixel are ordered forward-then-reverse per shift, which fixes the
/// queue order.
pub(crate) struct EdgeSet<'a> {
    pub height: usize,
    pub width: usize,
    grid: &'a PhasorGrid,
    shifts: Vec<ShiftVector>,
}

impl<'a> EdgeSet<'a> {
    pub fn new(grid: &'a PhasorGrid) -> Self {
        let (height, width) = grid.shape();
        Self {
            height,
            width,
            grid,
            shifts: grid.shifts().shifts().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    fn offset(&self, idx: usize, d: ShiftVector, sign: i64) -> Option<usize> {
        let r = (idx / self.width) as i64 + sign * d.dy() as i64;
        let c = (idx % self.width) as i64 + sign * d.dx() as i64;
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .then(|| r as usize * self.width + c as usize)
    }

    /// Edge number `e` out of `src`: `2k` forward along shift `k`,
    /// `2k + 1` backward.
    pub fn outgoing(&self, src: usize, e: usize) -> Option<Arrival> {
        let k = e / 2;
        let d = self.shifts[k];
        if e % 2 == 0 {
            if !self.grid.mask(k).data()[src] {
                return None;
            }
            let target = self.offset(src, d, 1)?;
            Some(Arrival {
                target,
                factor: self.grid.phasor(k).data()[src].conj(),
            })
        } else {
            let target = self.offset(src, d, -1)?;
            if !self.grid.mask(k).data()[target] {
                return None;
            }
            Some(Arrival {
                target,
                factor: self.grid.phasor(k).data()[target],
            })
        }
    }

    /// Edge number `e` into `dst`, as `(source, factor)`; the mirror image
    /// of [`EdgeSet::outgoing`].
    pub fn incoming(&self, dst: usize, e: usize) -> Option<(usize, Complex64)> {
        let k = e / 2;
        let d = self.shifts[k];
        if e % 2 == 0 {
            let src = self.offset(dst, d, -1)?;
            self.grid.mask(k).data()[src].then(|| (src, self.grid.phasor(k).data()[src].conj()))
        } else {
            let src = self.offset(dst, d, 1)?;
            self.grid.mask(k).data()[dst].then(|| (src, self.grid.phasor(k).data()[dst]))
        }
    }

    pub fn edge_count(&self) -> usize {
        2 * self.shifts.len()
    }

    pub fn check_reference(&self, reference: (usize, usize)) -> Result<usize> {
        let (row, col) = reference;
        if row >= self.height || col >= self.width {
            return Err(Error::InvalidParameter(format!(
                "reference ({row}, {col}) outside the {}x{} grid",
                self.height, self.width
            )));
        }
        let idx = row * self.width + col;
        let has_edge = (0..self.edge_count()).any(|e| self.outgoing(idx, e).is_some());
        if has_edge {
            Ok(idx)
        } else {
            Err(Error::InvalidReference { row, col })
        }
    }
}

/// Per-pixel accumulator for equal-hop arrivals.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Slot {
    pub first: Complex64,
    pub value: Complex64,
    pub sum: Complex64,
    pub count: u32,
}

impl Slot {
    pub fn new(p: Complex64) -> Self {
        Self { first: p, value: p, sum: p, count: 1 }
    }

    pub fn add(&mut self, p: Complex64, mode: AveragingMode) {
        match mode {
            AveragingMode::Mean => {
                self.sum += p;
                self.count += 1;
            }
            AveragingMode::Pairwise => self.value = (self.value + p) / 2.0,
            AveragingMode::Off => {}
        }
    }

    pub fn finish(&self, mode: AveragingMode) -> Complex64 {
        match mode {
            AveragingMode::Mean if self.count > 1 => {
                let mean = self.sum / self.count as f64;
                if mean.norm() < DEGENERATE_MEAN {
                    self.first
                } else {
                    mean
                }
            }
            AveragingMode::Mean | AveragingMode::Off => self.first,
            AveragingMode::Pairwise => self.value,
        }
    }
}

pub(crate) fn assemble(
    height: usize,
    width: usize,
    values: Vec<Option<Complex64>>,
    hops: Vec<Option<u32>>,
    reference: (usize, usize),
    iterations: u32,
) -> Result<PropagationResult> {
    let phasors = Grid::new(height, width, values.iter().map(|v| v.unwrap_or_default()).collect())?;
    let phase = PhaseMap::wrapped(phasors.map(|p| if p.norm() > 0.0 { p.arg() } else { 0.0 }))?;
    let unreached = Grid::new(height, width, hops.iter().map(Option::is_none).collect())?;
    Ok(PropagationResult {
        phase,
        phasors,
        hops: Grid::new(height, width, hops)?,
        unreached,
        reference,
        iterations,
    })
}

/// Queue-based propagation: a pixel's value is final when it leaves the
/// queue, by which point every arrival one hop closer has been seen.
pub fn propagate_bfs(
    grid: &PhasorGrid,
    reference: (usize, usize),
    mode: AveragingMode,
) -> Result<PropagationResult> {
    let edges = EdgeSet::new(grid);
    let start = edges.check_reference(reference)?;
    let n = edges.len();
    let mut hops: Vec<Option<u32>> = vec![None; n];
    let mut slots: Vec<Option<Slot>> = vec![None; n];
    let mut values: Vec<Option<Complex64>> = vec![None; n];
    let mut queue = VecDeque::new();
    hops[start] = Some(0);
    slots[start] = Some(Slot::new(Complex64::new(1.0, 0.0)));
    queue.push_back(start);
    let mut max_hop = 0;
    while let Some(u) = queue.pop_front() {
        let pu = slots[u].expect("queued pixels have a slot").finish(mode);
        values[u] = Some(pu);
        let hu = hops[u].expect("queued pixels have a hop");
        max_hop = max_hop.max(hu);
        for e in 0..edges.edge_count() {
            let Some(a) = edges.outgoing(u, e) else { continue };
            let candidate = pu * a.factor;
            match hops[a.target] {
                None => {
                    hops[a.target] = Some(hu + 1);
                    slots[a.target] = Some(Slot::new(candidate));
                    queue.push_back(a.target);
                }
                Some(h) if h == hu + 1 => {
                    slots[a.target].as_mut().expect("visited").add(candidate, mode);
                }
                Some(_) => {}
            }
        }
    }
    assemble(edges.height, edges.width, values, hops, reference, max_hop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{wrap_phase, ShiftSet};
    use crate::phantoms::{phase_profile, PhaseProfile};
    use std::f64::consts::PI;

    fn line(phase: &[f64], mags: &[i32]) -> PhasorGrid {
        let g = Grid::new(1, phase.len(), phase.to_vec()).unwrap();
        let set = ShiftSet::new(mags.iter().map(|&m| ShiftVector::horizontal(m).unwrap()).collect()).unwrap();
        PhasorGrid::from_phase(&g, &set).unwrap()
    }

    #[test]
    fn averaging_examples() {
        let a = Complex64::from_polar(1.0, 0.1);
        let m = average_phasors(&[a, a]).unwrap();
        assert!((m - a).norm() < 1e-15);
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(average_phasors(&[one, -one]).unwrap(), one);
        let m = average_phasors(&[one, Complex64::i()]).unwrap();
        assert!((m.arg() - PI / 4.0).abs() < 1e-15);
        assert!((m.norm() - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(average_phasors(&[]).is_none());
    }

    #[test]
    fn ramp_recovers_with_single_shift() {
        let phase = phase_profile(&PhaseProfile::Quadratic { alpha: 40.0 }, 16, 16, 0).unwrap();
        let set = ShiftSet::axis_pairs(&[1]).unwrap();
        let pg = PhasorGrid::from_phase(&phase, &set).unwrap();
        let reference = (8, 8);
        let r = propagate_bfs(&pg, reference, AveragingMode::Mean).unwrap();
        let phi0 = phase[reference];
        for (est, t) in r.phase.grid().data().iter().zip(phase.data()) {
            assert!(wrap_phase(est - (t - phi0)).abs() < 1e-10);
        }
        assert_eq!(r.phase.grid()[reference], 0.0);
        assert_eq!(r.phasors[reference], Complex64::new(1.0, 0.0));
        assert_eq!(r.max_hop(), Some(16));
    }

    #[test]
    fn nine_node_line() {
        let phase: Vec<f64> = (0..9).map(|i| 0.7 * (i as f64).powi(2)).collect();
        let pg = line(&phase, &[2, 3]);
        let r = propagate_bfs(&pg, (0, 4), AveragingMode::Mean).unwrap();
        assert_eq!(r.reached(), 9);
        assert_eq!(r.max_hop(), Some(2));
        for c in 0..9 {
            assert!(wrap_phase(r.phase.grid()[(0, c)] - (phase[c] - phase[4])).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_disconnected() {
        let phase = Grid::filled(8, 8, 0.0);
        let set = ShiftSet::axis_pairs(&[2, 4]).unwrap();
        let pg = PhasorGrid::from_phase(&phase, &set).unwrap();
        let r = propagate_bfs(&pg, (4, 4), AveragingMode::Mean).unwrap();
        assert_eq!(r.reached(), 16);
        assert_eq!(r.unreached.count_true(), 48);
        assert!(r.hops[(4, 5)].is_none());
        assert_eq!(r.phasors[(4, 5)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn isolated_reference_is_an_error() {
        let phase = Grid::filled(6, 6, 0.0);
        let set = ShiftSet::axis_pairs(&[1]).unwrap();
        let exact = PhasorGrid::from_phase(&phase, &set).unwrap();
        let masks: Vec<Mask> = (0..set.len()).map(|_| Grid::filled(6, 6, false)).collect();
        let pg = PhasorGrid::new(
            set.clone(),
            (0..set.len()).map(|k| exact.phasor(k).clone()).collect(),
            masks,
            (0..set.len()).map(|k| exact.reliability(k).clone()).collect(),
        )
        .unwrap();
        assert!(matches!(
            propagate_bfs(&pg, (3, 3), AveragingMode::Mean),
            Err(Error::InvalidReference { row: 3, col: 3 })
        ));
        assert!(matches!(
            propagate_bfs(&exact, (9, 0), AveragingMode::Mean),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn reverse_edge_uses_phasor() {
        // 3 nodes, shift 1; reference at the right end so every hop walks backward
        let phase = [0.3, -1.1, 2.0];
        let pg = line(&phase, &[1]);
        let r = propagate_bfs(&pg, (0, 2), AveragingMode::Off).unwrap();
        for c in 0..3 {
            assert!(wrap_phase(r.phase.grid()[(0, c)] - (phase[c] - phase[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_hop_arrivals_are_averaged() {
        // (1,1) is two hops from (0,0) through (0,1) and through (1,0)
        let phase = Grid::filled(3, 3, 0.0);
        let set = ShiftSet::axis_pairs(&[1]).unwrap();
        let exact = PhasorGrid::from_phase(&phase, &set).unwrap();
        let mut horizontal = exact.phasor(0).clone();
        horizontal[(1, 0)] = Complex64::from_polar(1.0, 0.4);
        let pg = PhasorGrid::new(
            set,
            vec![horizontal, exact.phasor(1).clone()],
            vec![exact.mask(0).clone(), exact.mask(1).clone()],
            vec![exact.reliability(0).clone(), exact.reliability(1).clone()],
        )
        .unwrap();
        let at = |mode| propagate_bfs(&pg, (0, 0), mode).unwrap().phase.grid()[(1, 1)];
        assert!((at(AveragingMode::Mean) + 0.2).abs() < 1e-12);
        assert!((at(AveragingMode::Pairwise) + 0.2).abs() < 1e-12);
        // first arrival comes through (0,1), which the horizontal edge queues first
        assert!(at(AveragingMode::Off).abs() < 1e-12);
        let r = propagate_bfs(&pg, (0, 0), AveragingMode::Mean).unwrap();
        assert_eq!(r.hops[(1, 1)], Some(2));
        assert!((r.phasors[(1, 1)].norm() - 0.2f64.cos()).abs() < 1e-12);
    }
}
