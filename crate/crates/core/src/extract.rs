//! Quadrature demodulation into phase-difference phasors, plus the
//! point-reference closed form.
//!
//! Sign convention: for shift `Δ`, `angle(p(i)) ≈ φ(i) - φ(i + Δ)`.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::srwf;
use crate::field::{validity_mask, Grid, Mask, ShiftSet};
use crate::forward::{MeasurementStack, QUADRATURE};

/// Default relative reliability floor.
pub const DEFAULT_RELIABILITY_FLOOR: f64 = 0.02;

/// Per-shift unit phasors with validity masks and pre-normalization
/// magnitudes.
#[derive(Clone, Debug)]
pub struct PhasorGrid {
    shifts: ShiftSet,
    phasors: Vec<Grid<Complex64>>,
    masks: Vec<Mask>,
    reliability: Vec<Grid<f64>>,
}

impl PhasorGrid {
    /// Validates shapes and intersects each mask with the non-wrapping
    /// validity mask of its shift.
    pub fn new(
        shifts: ShiftSet,
        phasors: Vec<Grid<Complex64>>,
        masks: Vec<Mask>,
        reliability: Vec<Grid<f64>>,
    ) -> Result<Self> {
        let k = shifts.len();
        if phasors.len() != k || masks.len() != k || reliability.len() != k || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "expected {k} phasor/mask/reliability grids"
            )));
        }
        let shape = phasors[0].shape();
        shifts.check_fits(shape.0, shape.1)?;
        let mut masks = masks;
        for i in 0..k {
            phasors[0].ensure_same_shape(&phasors[i])?;
            phasors[0].ensure_same_shape(&masks[i])?;
            phasors[0].ensure_same_shape(&reliability[i])?;
            let valid = validity_mask(shape.0, shape.1, shifts.shifts()[i]);
            masks[i] = masks[i].zip_map(&valid, |&a, &b| a && b)?;
        }
        Ok(Self {
            shifts,
            phasors,
            masks,
            reliability,
        })
    }

    /// Exact phasors `e^{j(φ(i) - φ(i+Δ))}` from a known phase map; all
    /// non-wrapping pixels valid.
    pub fn from_phase(phase: &Grid<f64>, shifts: &ShiftSet) -> Result<Self> {
        let (h, w) = phase.shape();
        shifts.check_fits(h, w)?;
        let mut phasors = Vec::new();
        let mut masks = Vec::new();
        for &d in shifts.iter() {
            let mask = validity_mask(h, w, d);
            phasors.push(Grid::from_fn(h, w, |r, c| {
                if mask[(r, c)] {
                    let r2 = (r as i64 + d.dy() as i64) as usize;
                    let c2 = (c as i64 + d.dx() as i64) as usize;
                    Complex64::from_polar(1.0, phase[(r, c)] - phase[(r2, c2)])
                } else {
                    Complex64::new(1.0, 0.0)
                }
            }));
            masks.push(mask);
        }
        let reliability = vec![Grid::filled(h, w, 1.0); shifts.len()];
        Self::new(shifts.clone(), phasors, masks, reliability)
    }

    pub fn shifts(&self) -> &ShiftSet {
        &self.shifts
    }

    pub fn shape(&self) -> (usize, usize) {
        self.phasors[0].shape()
    }

    pub fn phasor(&self, k: usize) -> &Grid<Complex64> {
        &self.phasors[k]
    }

    pub fn mask(&self, k: usize) -> &Mask {
        &self.masks[k]
    }

    pub fn reliability(&self, k: usize) -> &Grid<f64> {
        &self.reliability[k]
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for k in 0..self.len() {
            srwf::write_complex(dir.join(format!("p_k{k}.srwf")), &self.phasors[k])?;
            srwf::write_mask(dir.join(format!("mask_k{k}.srwf")), &self.masks[k])?;
            srwf::write_real(dir.join(format!("r_k{k}.srwf")), &self.reliability[k])?;
        }
        fs::write(
            dir.join("phasors.json"),
            serde_json::to_string_pretty(&PhasorMeta {
                shifts: self.shifts.clone(),
            })?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: PhasorMeta = serde_json::from_str(&fs::read_to_string(dir.join("phasors.json"))?)?;
        let mut phasors = Vec::new();
        let mut masks = Vec::new();
        let mut reliability = Vec::new();
        for k in 0..meta.shifts.len() {
            phasors.push(srwf::read_complex(dir.join(format!("p_k{k}.srwf")))?);
            masks.push(srwf::read_mask(dir.join(format!("mask_k{k}.srwf")))?);
            reliability.push(srwf::read_real(dir.join(format!("r_k{k}.srwf")))?);
        }
        Self::new(meta.shifts, phasors, masks, reliability)
    }
}

#[derive(Serialize, Deserialize)]
struct PhasorMeta {
    shifts: ShiftSet,
}

/// `Σ_q y_q e^{jφ_q}` at every pixel.
pub fn demodulate(frames: [&Grid<f64>; 4]) -> Result<Grid<Complex64>> {
    for f in &frames[1..] {
        frames[0].ensure_same_shape(f)?;
    }
    Ok(Grid::from_fn(frames[0].height(), frames[0].width(), |r, c| {
        (0..4).map(|q| QUADRATURE[q] * frames[q][(r, c)]).sum()
    }))
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Unit phasors per shift. Pixels whose demodulated magnitude is below
/// `reliability_floor × median` (median over non-wrapping pixels), exactly
/// zero, or wrap-around are marked invalid.
pub fn extract_phasors(stack: &MeasurementStack, reliability_floor: f64) -> Result<PhasorGrid> {
    if !(reliability_floor >= 0.0) {
        return Err(Error::InvalidParameter("reliability floor must be >= 0".into()));
    }
    let (h, w) = stack.shape();
    let mut phasors = Vec::new();
    let mut masks = Vec::new();
    let mut reliability = Vec::new();
    for (k, &d) in stack.shifts().iter().enumerate() {
        let frames = [stack.frame(k, 0)?, stack.frame(k, 1)?, stack.frame(k, 2)?, stack.frame(k, 3)?];
        let sum = demodulate(frames)?;
        let magnitude = sum.map(|z| z.norm());
        let valid = validity_mask(h, w, d);
        let med = median(
            magnitude
                .data()
                .iter()
                .zip(valid.data())
                .filter_map(|(&m, &v)| v.then_some(m))
                .collect(),
        );
        let threshold = reliability_floor * med;
        let mask = Grid::from_fn(h, w, |r, c| {
            let m = magnitude[(r, c)];
            valid[(r, c)] && m > 0.0 && m >= threshold
        });
        phasors.push(sum.zip_map(&magnitude, |&z, &m| if m > 0.0 { z / m } else { Complex64::new(1.0, 0.0) })?);
        masks.push(mask);
        reliability.push(magnitude);
    }
    PhasorGrid::new(stack.shifts().clone(), phasors, masks, reliability)
}

/// `Σ_q y_q e^{jφ_q} / (4 |x(0)|)`.
pub fn reconstruct_point_reference(frames: &[Grid<f64>; 4], reference_amplitude: f64) -> Result<Grid<Complex64>> {
    if !(reference_amplitude > 0.0) {
        return Err(Error::ZeroReference);
    }
    let sum = demodulate([&frames[0], &frames[1], &frames[2], &frames[3]])?;
    Ok(sum.map(|z| z / (4.0 * reference_amplitude)))
}

/// `|x(0)|` from the q = 0 frame at the reference, where `y = 4|x(0)|²`.
pub fn reference_amplitude(frames: &[Grid<f64>; 4], reference: (usize, usize)) -> Result<f64> {
    let y0 = *frames[0]
        .get(reference.0, reference.1)
        .ok_or_else(|| Error::InvalidParameter("reference pixel outside the frame".into()))?;
    Ok(y0.max(0.0).sqrt() / 2.0)
}

/// `sqrt(max(frame, 0))` of the amplitude capture.
pub fn recover_amplitude(stack: &MeasurementStack) -> Result<Grid<f64>> {
    let frame = stack
        .amplitude_frame()
        .ok_or_else(|| Error::InvalidParameter("stack has no amplitude frame".into()))?;
    Ok(frame.map(|&v| v.max(0.0).sqrt()))
}
