//! Least-squares refinement of a propagated phase estimate.
//!
//! Measured differences are unwrapped against the estimate, then
//! `min_φ Σ_k ‖D_k φ - g_k‖² + λ‖φ‖²` is solved in closed form in the
//! frequency domain, where each `D_k φ(i) = φ(i) - φ(i+Δ_k)` is a
//! circular convolution with transfer function `1 - e^{j2π f·Δ_k}`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::extract::PhasorGrid;
use crate::fft::{fft2, Direction};
use crate::field::{sample_shift, BoundaryMode, Grid, Mask, PhaseMap, ShiftSet, ShiftVector};
use crate::propagate::PropagationResult;

/// Default Tikhonov weight. Only the DC bin needs it, and that bin is
/// pinned separately, so it stays small enough not to bias low
/// frequencies.
pub const DEFAULT_LAMBDA: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct UnwrappedDifferences {
    shifts: ShiftSet,
    values: Vec<Grid<f64>>,
    masks: Vec<Mask>,
    offsets: Vec<Grid<i64>>,
}

impl UnwrappedDifferences {
    /// Differences taken as already unwrapped, with zero offsets.
    pub fn new(shifts: ShiftSet, values: Vec<Grid<f64>>, masks: Vec<Mask>) -> Result<Self> {
        if values.len() != shifts.len() || masks.len() != shifts.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} difference grids and masks",
                shifts.len()
            )));
        }
        for (v, m) in values.iter().zip(&masks) {
            values[0].ensure_same_shape(v)?;
            values[0].ensure_same_shape(m)?;
        }
        let offsets = values.iter().map(|v| Grid::filled(v.height(), v.width(), 0)).collect();
        Ok(Self {
            shifts,
            values,
            masks,
            offsets,
        })
    }

    pub fn shifts(&self) -> &ShiftSet {
        &self.shifts
    }

    pub fn values(&self, k: usize) -> &Grid<f64> {
        &self.values[k]
    }

    pub fn mask(&self, k: usize) -> &Mask {
        &self.masks[k]
    }

    pub fn offsets(&self, k: usize) -> &Grid<i64> {
        &self.offsets[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `D_Δ φ(i) = φ(i) - φ(i+Δ)` with circular indexing.
pub fn circular_difference(phase: &Grid<f64>, delta: ShiftVector) -> Result<Grid<f64>> {
    let ahead = sample_shift(phase, delta, BoundaryMode::Circular)?;
    phase.zip_map(&ahead, |a, b| a - b)
}

/// `m = round((D_k[est] - angle p_k) / 2π)` at valid pixels; invalid
/// pixels take `D_k[est]` directly.
pub fn unwrap_differences(grid: &PhasorGrid, estimate: &PhaseMap) -> Result<UnwrappedDifferences> {
    let est = estimate.grid();
    if est.shape() != grid.shape() {
        let (h, w) = grid.shape();
        return Err(Error::ShapeMismatch {
            expected: (h, w),
            actual: est.shape(),
        });
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut masks = Vec::with_capacity(grid.len());
    let mut offsets = Vec::with_capacity(grid.len());
    for (k, &d) in grid.shifts().iter().enumerate() {
        let predicted = circular_difference(est, d)?;
        let mask = grid.mask(k);
        let phasor = grid.phasor(k);
        let n = predicted.len();
        let mut v = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        for i in 0..n {
            if mask.data()[i] {
                let measured = phasor.data()[i].arg();
                let wraps = ((predicted.data()[i] - measured) / (2.0 * PI)).round();
                v.push(measured + 2.0 * PI * wraps);
                m.push(wraps as i64);
            } else {
                v.push(predicted.data()[i]);
                m.push(0);
            }
        }
        let (h, w) = predicted.shape();
        values.push(Grid::new(h, w, v)?);
        offsets.push(Grid::new(h, w, m)?);
        masks.push(mask.clone());
    }
    Ok(UnwrappedDifferences {
        shifts: grid.shifts().clone(),
        values,
        masks,
        offsets,
    })
}

/// Transfer function of `D_Δ` at integer frequency `(fy, fx)`. The phase
/// is reduced in integer arithmetic so unobservable bins come out exactly
/// zero.
pub fn transfer(delta: ShiftVector, fy: usize, fx: usize, height: usize, width: usize) -> Complex64 {
    let hw = (height * width) as u128;
    let dy = delta.dy().rem_euclid(height as i32) as u128;
    let dx = delta.dx().rem_euclid(width as i32) as u128;
    let turns = (fy as u128 * dy * width as u128 + fx as u128 * dx * height as u128) % hw;
    if turns == 0 {
        return Complex64::default();
    }
    Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * turns as f64 / hw as f64)
}

/// Closed-form solution with the DC bin fixed at zero. Bins where the
/// denominator vanishes are unobservable and also set to zero.
pub fn refine_ls(diffs: &UnwrappedDifferences, lambda: f64) -> Result<PhaseMap> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    if diffs.is_empty() {
        return Err(Error::InvalidParameter("refinement needs at least one shift".into()));
    }
    let (h, w) = diffs.values[0].shape();
    let mut numerator = Grid::filled(h, w, Complex64::default());
    let mut denominator = Grid::filled(h, w, lambda);
    let mut used = 0;
    for (k, &d) in diffs.shifts.iter().enumerate() {
        if diffs.masks[k].count_true() == 0 {
            log::warn!("dropping shift {d}: no valid differences");
            continue;
        }
        used += 1;
        let g = fft2(&diffs.values[k].map(|&v| Complex64::new(v, 0.0)), Direction::Forward);
        for fy in 0..h {
            for fx in 0..w {
                let s = transfer(d, fy, fx, h, w);
                numerator[(fy, fx)] += s.conj() * g[(fy, fx)];
                denominator[(fy, fx)] += s.norm_sqr();
            }
        }
    }
    if used == 0 {
        return Err(Error::InvalidParameter("every shift has an empty difference mask".into()));
    }
    let mut spectrum = numerator.zip_map(&denominator, |n, &d| if d > 0.0 { n / d } else { Complex64::default() })?;
    spectrum[(0, 0)] = Complex64::default();
    let phi = fft2(&spectrum, Direction::Inverse).map(|z| z.re);
    PhaseMap::unwrapped(phi)
}

/// `unwrapped` is the least-squares potential itself; its 2π cuts follow
/// those of the estimate it was unwrapped against.
#[derive(Clone, Debug)]
pub struct Refined {
    pub unwrapped: PhaseMap,
    pub wrapped: PhaseMap,
}

/// Unwrap against the propagated phase, solve, and re-zero the reference.
pub fn refine_pipeline(propagation: &PropagationResult, grid: &PhasorGrid, lambda: f64) -> Result<Refined> {
    let diffs = unwrap_differences(grid, &propagation.phase)?;
    let phi = refine_ls(&diffs, lambda)?;
    let at_ref = phi.grid()[propagation.reference];
    let unwrapped = PhaseMap::unwrapped(phi.grid().map(|v| v - at_ref))?;
    let wrapped = unwrapped.to_wrapped();
    Ok(Refined { unwrapped, wrapped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::wrap_phase;
    use crate::phantoms::{phase_profile, PhaseProfile};
    use crate::propagate::{propagate_bfs, AveragingMode};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_diffs(phase: &Grid<f64>, set: &ShiftSet) -> UnwrappedDifferences {
        let values = set.iter().map(|&d| circular_difference(phase, d).unwrap()).collect();
        let masks = set.iter().map(|_| Grid::filled(phase.height(), phase.width(), true)).collect();
        UnwrappedDifferences::new(set.clone(), values, masks).unwrap()
    }

    fn random_diffs(h: usize, w: usize, set: &ShiftSet, seed: u64) -> UnwrappedDifferences {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = set
            .iter()
            .map(|_| Grid::from_fn(h, w, |_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let masks = set.iter().map(|_| Grid::filled(h, w, true)).collect();
        UnwrappedDifferences::new(set.clone(), values, masks).unwrap()
    }

    /// `A φ = Σ_k D_kᵀ D_k φ` and `b = Σ_k D_kᵀ g_k` applied directly on the
    /// torus, without transforms.
    fn apply_dt(g: &Grid<f64>, d: ShiftVector) -> Grid<f64> {
        // (D_kᵀ g)(i) = g(i) - g(i - Δ)
        let behind = sample_shift(g, d.reversed(), BoundaryMode::Circular).unwrap();
        g.zip_map(&behind, |a, b| a - b).unwrap()
    }

    fn normal_residual(diffs: &UnwrappedDifferences, phi: &Grid<f64>, lambda: f64) -> (f64, f64) {
        let (h, w) = phi.shape();
        let mut lhs = phi.map(|v| lambda * v);
        let mut rhs = Grid::filled(h, w, 0.0);
        for (k, &d) in diffs.shifts().iter().enumerate() {
            let ad = apply_dt(&circular_difference(phi, d).unwrap(), d);
            lhs = lhs.zip_map(&ad, |a, b| a + b).unwrap();
            let bd = apply_dt(diffs.values(k), d);
            rhs = rhs.zip_map(&bd, |a, b| a + b).unwrap();
        }
        let r: f64 = lhs.data().iter().zip(rhs.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let n: f64 = rhs.data().iter().map(|b| b * b).sum::<f64>().sqrt();
        (r, n)
    }

    #[test]
    fn consistent_estimate_needs_no_wraps() {
        let phase = phase_profile(&PhaseProfile::Peaks { scale: 0.3 }, 16, 16, 0).unwrap();
        let set = ShiftSet::axis_pairs(&[1, 2]).unwrap();
        let pg = PhasorGrid::from_phase(&phase, &set).unwrap();
        let d = unwrap_differences(&pg, &PhaseMap::unwrapped(phase.clone()).unwrap()).unwrap();
        for k in 0..d.len() {
            assert!(d.offsets(k).data().iter().all(|&m| m == 0));
        }
    }

    #[test]
    fn large_difference_unwraps_by_one_turn() {
        let phase = Grid::new(1, 2, vec![1.5 * PI, 0.0]).unwrap();
        let set = ShiftSet::new(vec![ShiftVector::horizontal(1).unwrap()]).unwrap();
        let pg = PhasorGrid::from_phase(&phase, &set).unwrap();
        assert!((pg.phasor(0)[(0, 0)].arg() + PI / 2.0).abs() < 1e-12);
        let d = unwrap_differences(&pg, &PhaseMap::unwrapped(phase.clone()).unwrap()).unwrap();
        assert_eq!(d.offsets(0)[(0, 0)], 1);
        assert!((d.values(0)[(0, 0)] - 1.5 * PI).abs() < 1e-12);
        let shifted = PhaseMap::unwrapped(phase.map(|v| v + 0.9)).unwrap();
        let d2 = unwrap_differences(&pg, &shifted).unwrap();
        assert_eq!(d2.offsets(0).data(), d.offsets(0).data());
    }

    #[test]
    fn consistent_differences_recover_phase() {
        let phase = phase_profile(&PhaseProfile::Quadratic { alpha: 12.0 * PI }, 32, 32, 0).unwrap();
        let set = ShiftSet::axis_pairs(&[3, 4]).unwrap();
        let phi = refine_ls(&exact_diffs(&phase, &set), DEFAULT_LAMBDA).unwrap();
        let mean = phase.mean();
        let worst = phi
            .grid()
            .data()
            .iter()
            .zip(phase.data())
            .map(|(a, b)| (a - (b - mean)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn zero_differences_give_zero() {
        let set = ShiftSet::axis_pairs(&[1]).unwrap();
        let phi = refine_ls(&exact_diffs(&Grid::filled(8, 8, 0.0), &set), 1e-3).unwrap();
        assert!(phi.grid().data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn matches_dense_normal_equations() {
        let (h, w) = (16, 16);
        let n = h * w;
        let set = ShiftSet::axis_pairs(&[2, 3]).unwrap();
        for (seed, lambda) in [(0u64, 0.0), (1, 1e-3), (2, 0.5)] {
            let diffs = random_diffs(h, w, &set, seed);
            // dense D_k, row i: +1 at i, -1 at i + Δ (circular)
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut b = DVector::<f64>::zeros(n);
            for (k, &d) in set.iter().enumerate() {
                let mut dk = DMatrix::<f64>::zeros(n, n);
                for r in 0..h {
                    for c in 0..w {
                        let i = r * w + c;
                        let r2 = (r as i64 + d.dy() as i64).rem_euclid(h as i64) as usize;
                        let c2 = (c as i64 + d.dx() as i64).rem_euclid(w as i64) as usize;
                        dk[(i, i)] += 1.0;
                        dk[(i, r2 * w + c2)] -= 1.0;
                    }
                }
                let g = DVector::from_row_slice(diffs.values(k).data());
                a += dk.transpose() * &dk;
                b += dk.transpose() * g;
            }
            // gauge: the mean of the solution is zero
            let gauge = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
            let m = a + DMatrix::<f64>::identity(n, n) * lambda + gauge;
            let x = m.lu().solve(&b).unwrap();
            let phi = refine_ls(&diffs, lambda).unwrap();
            let err = phi.grid().data().iter().zip(x.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(err / x.norm() < 1e-6, "relative deviation {}", err / x.norm());
        }
    }

    #[test]
    fn all_invalid_shift_is_dropped() {
        let phase = phase_profile(&PhaseProfile::Peaks { scale: 1.0 }, 16, 16, 0).unwrap();
        let set = ShiftSet::axis_pairs(&[1, 2]).unwrap();
        let mut d = exact_diffs(&phase, &set);
        d.masks[3] = Grid::filled(16, 16, false);
        d.values[3] = Grid::filled(16, 16, 100.0);
        let phi = refine_ls(&d, DEFAULT_LAMBDA).unwrap();
        let mean = phase.mean();
        for (a, b) in phi.grid().data().iter().zip(phase.data()) {
            assert!((a - (b - mean)).abs() < 1e-6);
        }
        for m in d.masks.iter_mut() {
            *m = Grid::filled(16, 16, false);
        }
        assert!(refine_ls(&d, DEFAULT_LAMBDA).is_err());
        assert!(refine_ls(&d, -1.0).is_err());
    }

    #[test]
    fn pipeline_is_identity_when_noiseless() {
        let phase = phase_profile(&PhaseProfile::Peaks { scale: 1.5 }, 32, 32, 0).unwrap();
        let set = ShiftSet::axis_pairs(&[5, 6]).unwrap();
        let pg = PhasorGrid::from_phase(&phase, &set).unwrap();
        let prop = propagate_bfs(&pg, (16, 16), AveragingMode::Mean).unwrap();
        let refined = refine_pipeline(&prop, &pg, DEFAULT_LAMBDA).unwrap();
        let phi0 = phase[(16, 16)];
        for (a, t) in refined.wrapped.grid().data().iter().zip(phase.data()) {
            assert!(wrap_phase(a - (t - phi0)).abs() < 1e-6);
        }
        assert_eq!(refined.unwrapped.grid()[(16, 16)], 0.0);
        for (u, w) in refined.unwrapped.grid().data().iter().zip(refined.wrapped.grid().data()) {
            assert!(wrap_phase(u - w).abs() < 1e-12);
        }
    }

    #[test]
    fn pipeline_is_gauge_invariant() {
        let phase = phase_profile(&PhaseProfile::Peaks { scale: 1.0 }, 24, 24, 0).unwrap();
        let set = ShiftSet::axis_pairs(&[4, 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = PhasorGrid::from_phase(&phase, &set).unwrap();
        let noisy = PhasorGrid::new(
            set.clone(),
            (0..set.len())
                .map(|k| clean.phasor(k).map(|p| p * Complex64::from_polar(1.0, rng.random_range(-0.4..0.4))))
                .collect(),
            (0..set.len()).map(|k| clean.mask(k).clone()).collect(),
            (0..set.len()).map(|k| clean.reliability(k).clone()).collect(),
        )
        .unwrap();
        let prop = propagate_bfs(&noisy, (12, 12), AveragingMode::Mean).unwrap();
        let a = refine_pipeline(&prop, &noisy, DEFAULT_LAMBDA).unwrap();
        let mut moved = prop.clone();
        moved.phase = PhaseMap::unwrapped(prop.phase.grid().map(|v| v + 2.5)).unwrap();
        let b = refine_pipeline(&moved, &noisy, DEFAULT_LAMBDA).unwrap();
        for (x, y) in a.unwrapped.grid().data().iter().zip(b.unwrapped.grid().data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_zero_is_well_posed() {
        let set = ShiftSet::axis_pairs(&[2, 4]).unwrap();
        let phi = refine_ls(&random_diffs(16, 16, &set, 3), 0.0).unwrap();
        assert!(phi.grid().data().iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn normal_equation_residual(h in 2usize..33, w in 2usize..33, m in 1i32..4, seed in any::<u64>(), lambda in prop_oneof![Just(0.0), 1e-6f64..1.0]) {
            prop_assume!((m as usize) < h && (m as usize) < w);
            let set = ShiftSet::axis_pairs(&[m as u32]).unwrap();
            let diffs = random_diffs(h, w, &set, seed);
            let phi = refine_ls(&diffs, lambda).unwrap();
            let (r, n) = normal_residual(&diffs, phi.grid(), lambda);
            // the DC row is the gauge; b has no DC component, so λ·mean(φ) = 0 holds too
            prop_assert!(r <= 1e-8 * n.max(1.0), "residual {r} vs {n}");
        }
    }
}
