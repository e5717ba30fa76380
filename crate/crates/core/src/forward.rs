//! Measurement synthesis: shifted self-interference with four quadratures,
//! point-reference interferometry, and the unmodulated amplitude capture.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::srwf;
use crate::field::{sample_shift, BoundaryMode, ComplexField, Grid, ShiftSet};
use crate::noise::{apply_noise, empirical_snr, frame_seed, NoiseSpec};

/// `e^{jπq/2}` for `q = 0..4`, exact.
pub const QUADRATURE: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

/// Intensity frames `y[k][q]` plus the amplitude capture `|x|²`.
#[derive(Clone, Debug)]
pub struct MeasurementStack {
    shifts: ShiftSet,
    height: usize,
    width: usize,
    frames: BTreeMap<(usize, usize), Grid<f64>>,
    amplitude: Option<Grid<f64>>,
    pub noise: NoiseSpec,
    /// Empirical SNR over every frame; `+∞` for noiseless stacks.
    pub achieved_snr_db: f64,
}

impl MeasurementStack {
    /// Assembles a stack from parts, which may be incomplete (e.g. when read
    /// from disk). Consumers report missing frames.
    pub fn from_parts(
        shifts: ShiftSet,
        height: usize,
        width: usize,
        frames: BTreeMap<(usize, usize), Grid<f64>>,
        amplitude: Option<Grid<f64>>,
        noise: NoiseSpec,
        achieved_snr_db: f64,
    ) -> Result<Self> {
        for ((k, q), f) in &frames {
            if *k >= shifts.len() || *q >= 4 {
                return Err(Error::InvalidParameter(format!("frame index ({k}, {q}) out of range")));
            }
            if f.shape() != (height, width) {
                return Err(Error::ShapeMismatch {
                    expected: (height, width),
                    actual: f.shape(),
                });
            }
        }
        if let Some(a) = &amplitude {
            if a.shape() != (height, width) {
                return Err(Error::ShapeMismatch {
                    expected: (height, width),
                    actual: a.shape(),
                });
            }
        }
        Ok(Self {
            shifts,
            height,
            width,
            frames,
            amplitude,
            noise,
            achieved_snr_db,
        })
    }

    pub fn shifts(&self) -> &ShiftSet {
        &self.shifts
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn frame(&self, k: usize, q: usize) -> Result<&Grid<f64>> {
        self.frames
            .get(&(k, q))
            .ok_or(Error::MissingQuadrature { shift: k, quadrature: q })
    }

    pub fn amplitude_frame(&self) -> Option<&Grid<f64>> {
        self.amplitude.as_ref()
    }

    pub fn remove_frame(&mut self, k: usize, q: usize) -> Option<Grid<f64>> {
        self.frames.remove(&(k, q))
    }

    /// Number of intensity measurements excluding the amplitude capture.
    pub fn measurement_count(&self) -> usize {
        self.frames.len()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for ((k, q), f) in &self.frames {
            srwf::write_real(dir.join(format!("y_k{k}_q{q}.srwf")), f)?;
        }
        if let Some(a) = &self.amplitude {
            srwf::write_real(dir.join("amp.srwf"), a)?;
        }
        let meta = StackMeta {
            height: self.height,
            width: self.width,
            shifts: self.shifts.clone(),
            noise: self.noise,
            achieved_snr_db: self.achieved_snr_db.is_finite().then_some(self.achieved_snr_db),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: StackMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let mut frames = BTreeMap::new();
        for k in 0..meta.shifts.len() {
            for q in 0..4 {
                let p = dir.join(format!("y_k{k}_q{q}.srwf"));
                if p.exists() {
                    frames.insert((k, q), srwf::read_real(&p)?);
                }
            }
        }
        let amp_path = dir.join("amp.srwf");
        let amplitude = if amp_path.exists() {
            Some(srwf::read_real(&amp_path)?)
        } else {
            None
        };
        Self::from_parts(
            meta.shifts,
            meta.height,
            meta.width,
            frames,
            amplitude,
            meta.noise,
            meta.achieved_snr_db.unwrap_or(f64::INFINITY),
        )
    }
}

/// `meta.json` schema of a saved stack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StackMeta {
    pub height: usize,
    pub width: usize,
    pub shifts: ShiftSet,
    pub noise: NoiseSpec,
    /// `null` encodes a noiseless (infinite SNR) stack.
    pub achieved_snr_db: Option<f64>,
}

/// Noiseless frame `|x + e^{jφ_q} S_Δ(x)|²` with `S_Δ(x)(i) = x(i + Δ)`.
pub fn interference_frame(x: &ComplexField, shifted: &ComplexField, q: usize) -> Grid<f64> {
    let phase = QUADRATURE[q];
    Grid::from_fn(x.height(), x.width(), |r, c| (x[(r, c)] + phase * shifted[(r, c)]).norm_sqr())
}

const AMPLITUDE_STREAM: u64 = u64::MAX >> 2;

/// Synthesizes the full shifted-interference stack with circular shifts.
pub fn simulate_shifted(x: &ComplexField, shifts: &ShiftSet, noise: &NoiseSpec) -> Result<MeasurementStack> {
    simulate_shifted_with(x, shifts, noise, BoundaryMode::Circular)
}

/// As [`simulate_shifted`], choosing what the shifted copy holds where
/// `i + Δ` leaves the grid. Those pixels are masked at extraction either way.
pub fn simulate_shifted_with(
    x: &ComplexField,
    shifts: &ShiftSet,
    noise: &NoiseSpec,
    boundary: BoundaryMode,
) -> Result<MeasurementStack> {
    noise.validate()?;
    let (h, w) = x.shape();
    shifts.check_fits(h, w)?;
    if shifts.is_empty() {
        return Err(Error::InvalidParameter("empty shift set".into()));
    }
    let shifted: Vec<ComplexField> = shifts
        .iter()
        .map(|&d| sample_shift(x, d, boundary))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..shifts.len()).flat_map(|k| (0..4).map(move |q| (k, q))).collect();

    let noisy: Vec<((usize, usize), Grid<f64>, Grid<f64>)> = jobs
        .par_iter()
        .map(|&(k, q)| {
            let clean = interference_frame(x, &shifted[k], q);
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(noise.seed, k as u64, q as u64));
            let y = apply_noise(&clean, noise, &mut rng)?;
            Ok(((k, q), clean, y))
        })
        .collect::<Result<_>>()?;

    let amp_clean = x.map(|z| z.norm_sqr());
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(noise.seed, AMPLITUDE_STREAM, 0));
    let amp = apply_noise(&amp_clean, noise, &mut rng)?;

    let mut clean_all = Vec::new();
    let mut noisy_all = Vec::new();
    let mut frames = BTreeMap::new();
    for (key, clean, y) in noisy {
        clean_all.extend_from_slice(clean.data());
        noisy_all.extend_from_slice(y.data());
        frames.insert(key, y);
    }
    clean_all.extend_from_slice(amp_clean.data());
    noisy_all.extend_from_slice(amp.data());
    let achieved = empirical_snr(&clean_all, &noisy_all);

    MeasurementStack::from_parts(shifts.clone(), h, w, frames, Some(amp), *noise, achieved)
}

/// Four frames `|x + x(0) e^{jφ_q}|²` referenced to the pixel `reference`.
/// Reconstruction recovers `x` in the gauge where `x(0)` is real positive.
pub fn simulate_point_reference(
    x: &ComplexField,
    reference: (usize, usize),
    noise: &NoiseSpec,
) -> Result<[Grid<f64>; 4]> {
    noise.validate()?;
    let x0 = *x
        .get(reference.0, reference.1)
        .ok_or_else(|| Error::InvalidParameter("reference pixel outside the field".into()))?;
    if x0.norm() == 0.0 {
        return Err(Error::ZeroReference);
    }
    let frame = |q: usize| -> Result<Grid<f64>> {
        let clean = x.map(|z| (z + QUADRATURE[q] * x0).norm_sqr());
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(noise.seed, 0, q as u64));
        apply_noise(&clean, noise, &mut rng)
    };
    Ok([frame(0)?, frame(1)?, frame(2)?, frame(3)?])
}
