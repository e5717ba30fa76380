//! Shared helpers for the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use shiftwave::extract::PhasorGrid;
use shiftwave::field::{wrap_phase, Grid};
use shiftwave::propagate::PropagationResult;

/// Von Mises draw with mean 0 (Best and Fisher, 1979).
pub fn von_mises<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}

/// Exact phasors with every angle perturbed by von Mises noise.
pub fn perturb<R: Rng + ?Sized>(grid: &PhasorGrid, kappa: f64, rng: &mut R) -> PhasorGrid {
    let phasors = (0..grid.len())
        .map(|k| grid.phasor(k).map(|p| p * Complex64::from_polar(1.0, von_mises(kappa, rng))))
        .collect();
    let masks = (0..grid.len()).map(|k| grid.mask(k).clone()).collect();
    let rel = (0..grid.len()).map(|k| grid.reliability(k).clone()).collect();
    PhasorGrid::new(grid.shifts().clone(), phasors, masks, rel).unwrap()
}

/// Largest wrapped deviation from `truth` over reached pixels, with the
/// gauge fixed at the reference.
pub fn max_anchored_deviation(result: &PropagationResult, truth: &Grid<f64>) -> f64 {
    let (r0, c0) = result.reference;
    let offset = result.phase.grid()[(r0, c0)] - truth[(r0, c0)];
    let mut worst = 0.0f64;
    for i in 0..truth.len() {
        if result.hops.data()[i].is_some() {
            let d = wrap_phase(result.phase.grid().data()[i] - truth.data()[i] - offset);
            worst = worst.max(d.abs());
        }
    }
    worst
}
