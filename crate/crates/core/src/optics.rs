//! Free-space propagation by the angular spectrum method, refocusing by
//! sharpness search, and correction of a known phase screen.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, frequency, Direction};
use crate::field::{ComplexField, Grid, PhaseMap};

/// Zero-padding factor used by [`refocus_sweep`] unless overridden.
pub const DEFAULT_SWEEP_PADDING: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Meters.
    pub wavelength: f64,
    /// Meters per pixel.
    pub pitch: f64,
    /// Signed propagation distance in meters.
    pub distance: f64,
    /// The field is embedded in a zero grid this many times larger per
    /// axis before transforming; 1 means circular propagation.
    pub padding: usize,
}

impl PropagationParams {
    pub fn new(wavelength: f64, pitch: f64, distance: f64) -> Self {
        Self {
            wavelength,
            pitch,
            distance,
            padding: 1,
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn at(mut self, distance: f64) -> Self {
        self.distance = distance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidParameter(format!("wavelength must be positive, got {}", self.wavelength)));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!("pitch must be positive, got {}", self.pitch)));
        }
        if !self.distance.is_finite() {
            return Err(Error::InvalidParameter("distance must be finite".into()));
        }
        if self.padding == 0 {
            return Err(Error::InvalidParameter("padding factor must be at least 1".into()));
        }
        Ok(())
    }
}

fn embed(field: &ComplexField, h: usize, w: usize) -> ComplexField {
    let (r0, c0) = ((h - field.height()) / 2, (w - field.width()) / 2);
    let mut out = Grid::filled(h, w, Complex64::default());
    for r in 0..field.height() {
        for c in 0..field.width() {
            out[(r0 + r, c0 + c)] = field[(r, c)];
        }
    }
    out
}

fn crop(field: &ComplexField, h: usize, w: usize) -> ComplexField {
    let (r0, c0) = ((field.height() - h) / 2, (field.width() - w) / 2);
    Grid::from_fn(h, w, |r, c| field[(r0 + r, c0 + c)])
}

/// `H(f) = exp(j2πz √(1/λ² - fx² - fy²))` on propagating frequencies,
/// zero on evanescent ones.
pub fn transfer_function(h: usize, w: usize, params: &PropagationParams) -> Grid<Complex64> {
    let inv_l2 = 1.0 / (params.wavelength * params.wavelength);
    Grid::from_fn(h, w, |u, v| {
        let fy = frequency(u, h) / (h as f64 * params.pitch);
        let fx = frequency(v, w) / (w as f64 * params.pitch);
        let arg = inv_l2 - fx * fx - fy * fy;
        if arg > 0.0 {
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * params.distance * arg.sqrt())
        } else {
            Complex64::default()
        }
    })
}

pub fn propagate_free_space(field: &ComplexField, params: &PropagationParams) -> Result<ComplexField> {
    params.validate()?;
    field.ensure_finite()?;
    let (h, w) = field.shape();
    let (ph, pw) = (h * params.padding, w * params.padding);
    let padded = if params.padding == 1 { field.clone() } else { embed(field, ph, pw) };
    let spectrum = fft2(&padded, Direction::Forward);
    let tf = transfer_function(ph, pw, params);
    let out = fft2(&spectrum.zip_map(&tf, |a, b| a * b)?, Direction::Inverse);
    Ok(if params.padding == 1 { out } else { crop(&out, h, w) })
}

/// `var(I) / mean(I)²`; zero for a dark field.
pub fn sharpness(field: &ComplexField) -> f64 {
    let intensity: Vec<f64> = field.data().iter().map(|z| z.norm_sqr()).collect();
    let n = intensity.len() as f64;
    let mean = intensity.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = intensity.iter().map(|i| (i - mean).powi(2)).sum::<f64>() / n;
    var / (mean * mean)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefocusResult {
    /// `(z, sharpness)` in input order.
    pub table: Vec<(f64, f64)>,
    pub best_z: f64,
}

/// Sharpness of the field propagated to each `z`; the first maximum wins
/// ties. `params.distance` is ignored.
pub fn refocus_sweep(field: &ComplexField, params: &PropagationParams, z_list: &[f64]) -> Result<RefocusResult> {
    if z_list.is_empty() {
        return Err(Error::InvalidParameter("refocus sweep needs at least one distance".into()));
    }
    let table: Vec<(f64, f64)> = z_list
        .par_iter()
        .map(|&z| Ok((z, sharpness(&propagate_free_space(field, &params.at(z))?))))
        .collect::<Result<_>>()?;
    let mut best = table[0];
    for &row in &table[1..] {
        if row.1 > best.1 {
            best = row;
        }
    }
    Ok(RefocusResult { table, best_z: best.0 })
}

/// `field · e^{-j·screen}`.
pub fn correct_known_phase(field: &ComplexField, screen: &PhaseMap) -> Result<ComplexField> {
    field.zip_map(screen.grid(), |z, &s| z * Complex64::from_polar(1.0, -s))
}
